//! Map file loading.
//!
//! ```toml
//! [workspace]
//! xmin = -10.0
//! xmax = 10.0
//! ymin = -10.0
//! ymax = 10.0
//!
//! [[obstacles]]
//! kind = "circle"
//! center = [2.0, -3.0]
//! radius = 1.0
//!
//! [[obstacles]]
//! kind = "polygon"
//! vertices = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]]   # convex, counterclockwise
//! ```

use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use super::{ObstacleMap, Shape, Workspace};
use crate::error::{Error, Result};

/// Maps compiled into the binary, addressable by file name.
pub const BUILTIN_MAPS: &[(&str, &str)] = &[
    ("clutter.toml", include_str!("../../maps/clutter.toml")),
    ("open.toml", include_str!("../../maps/open.toml")),
];

pub fn builtin_map(file_name: &str) -> Option<&'static str> {
    BUILTIN_MAPS
        .iter()
        .find(|(name, _)| *name == file_name)
        .map(|(_, text)| *text)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    workspace: Spanned<Workspace>,
    #[serde(default)]
    obstacles: Vec<Spanned<ObstacleEntry>>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ObstacleEntry {
    Circle { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ObstacleMap {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// Parses and validates a map; `origin` only labels error messages.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let file: MapFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            parse_err(line, e.message().to_string())
        })?;

        let ws = file.workspace.get_ref();
        if !(ws.xmin < ws.xmax && ws.ymin < ws.ymax) {
            return Err(parse_err(
                line_of(text, file.workspace.span().start),
                "workspace needs xmin < xmax and ymin < ymax".into(),
            ));
        }

        let obstacles = file
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let shape = match entry.get_ref() {
                    ObstacleEntry::Circle { center, radius } => Shape::circle(*center, *radius),
                    ObstacleEntry::Polygon { vertices } => Shape::polygon(vertices),
                };
                shape.map_err(|e| {
                    let msg = match e {
                        Error::Usage(m) => m,
                        other => other.to_string(),
                    };
                    parse_err(line_of(text, entry.span().start), format!("obstacle {i}: {msg}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ObstacleMap {
            workspace: *ws,
            obstacles,
        })
    }
}
