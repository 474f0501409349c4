//! Higher-order barrier chains over the cascade `x̃ = (x, u)` and their
//! composition with the input constraints into one relaxed barrier `h`.
//!
//! Every derivative is taken by Taylor expansion along the flow of the
//! time-augmented cascade field `(1, f(x) + g(x)u, A_c u)`. Along that flow
//! `d/ds = ∂/∂t + L_f̃`, so a chain stage is just
//! `ψ_{i+1} = ψ_i' + α_i ψ_i` on the series, and `h` is the soft minimum of
//! the resulting series. A nested seed on time or on a column of
//! `g̃ = (0, B_c)` splits out `∂h/∂t` and `L_g̃ h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception_barrier::BarrierBuffer;
use crate::robot_model::CascadeModel;
use crate::safety_filter::ControlDynamics;
use crate::smooth_math::{flow_series, softmin_real, Jet, Real, VectorField};

/// Longest jet the dispatcher instantiates; allows `max(r, d) ≤ 6`.
pub const MAX_JET_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl CascadeState {
    pub fn new(t: f64, x: Vec<f64>, u: Vec<f64>) -> Self {
        Self { t, x, u }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().chain(&self.u).all(|v| v.is_finite())
    }

    /// `(t, x, u)` flattened.
    pub fn augmented(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(1 + self.x.len() + self.u.len());
        z.push(self.t);
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.u);
        z
    }
}

/// Linear class-K slopes of the two chains. `r = psi_gains.len()` is the
/// relative degree of the perception barrier, `d = xi_gains.len()` that of
/// every known state constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HocbfChainConfig {
    pub psi_gains: Vec<f64>,
    pub xi_gains: Vec<f64>,
}

impl Default for HocbfChainConfig {
    fn default() -> Self {
        Self {
            psi_gains: vec![25.0, 20.0],
            xi_gains: vec![15.0],
        }
    }
}

impl HocbfChainConfig {
    pub fn r(&self) -> usize {
        self.psi_gains.len()
    }

    pub fn d(&self) -> usize {
        self.xi_gains.len()
    }

    /// Coefficients needed so the composed series still has an exact
    /// first-order term.
    pub fn jet_len(&self) -> usize {
        self.r().max(self.d()) + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi_gains.is_empty() || self.xi_gains.is_empty() {
            return Err(Error::usage(
                "chain.psi_gains and chain.xi_gains need at least one slope",
            ));
        }
        if !self
            .psi_gains
            .iter()
            .chain(&self.xi_gains)
            .all(|&g| g > 0.0 && g.is_finite())
        {
            return Err(Error::usage("chain slopes must be positive"));
        }
        if self.jet_len() > MAX_JET_LEN {
            return Err(Error::usage(format!(
                "chain depth {} exceeds the supported jet truncation",
                self.r().max(self.d())
            )));
        }
        Ok(())
    }
}

/// Values of every chain stage and input constraint at one point.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ComponentValues {
    /// `ψ_0 ..= ψ_r`.
    pub psi: Vec<f64>,
    /// `xi[j]` holds `ξ_{j,0} ..= ξ_{j,d}`.
    pub xi: Vec<Vec<f64>>,
    /// `φ_1 ..= φ_ℓ`.
    pub phi: Vec<f64>,
}

impl ComponentValues {
    /// Arguments of the soft minimum defining `h`: `ψ_r`, each `ξ_{j,d}`, each `φ_j`.
    pub fn composed(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.xi.len() + self.phi.len());
        v.extend(self.psi.last().copied());
        v.extend(self.xi.iter().filter_map(|c| c.last().copied()));
        v.extend_from_slice(&self.phi);
        v
    }

    pub fn psi0(&self) -> f64 {
        self.psi.first().copied().unwrap_or(f64::NAN)
    }

    /// Smallest `ξ_{j,0}`.
    pub fn min_xi(&self) -> f64 {
        self.xi
            .iter()
            .filter_map(|c| c.first().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_phi(&self) -> f64 {
        self.phi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `h` and the first-order quantities the safety filter needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierEvaluation {
    pub h: f64,
    pub dh_dt: f64,
    pub lf_h: f64,
    pub lg_h: Vec<f64>,
    pub components: ComponentValues,
}

impl BarrierEvaluation {
    /// An evaluation without component detail, for exercising the filter.
    pub fn from_parts(h: f64, dh_dt: f64, lf_h: f64, lg_h: Vec<f64>) -> Self {
        Self {
            h,
            dh_dt,
            lf_h,
            lg_h,
            components: ComponentValues::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Boundary,
    Negative,
}

impl Sign {
    pub fn of(v: f64) -> Self {
        if v > 0.0 {
            Sign::Positive
        } else if v == 0.0 {
            Sign::Boundary
        } else {
            Sign::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipEntry {
    pub name: String,
    pub value: f64,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub entries: Vec<MembershipEntry>,
}

impl MembershipReport {
    /// True when every listed function is nonnegative.
    pub fn all_nonnegative(&self) -> bool {
        self.entries.iter().all(|e| e.sign != Sign::Negative)
    }

    pub fn get(&self, name: &str) -> Option<&MembershipEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &MembershipEntry> {
        self.entries.iter().filter(|e| e.sign == Sign::Negative)
    }
}

/// `(1, f(x) + g(x)u, A_c u)` over `z = (t, x, u)`.
struct CascadeField<'a, M> {
    model: &'a M,
    dynamics: &'a ControlDynamics,
}

impl<M: CascadeModel> VectorField for CascadeField<'_, M> {
    fn dim(&self) -> usize {
        1 + self.model.state_dim() + self.model.input_dim()
    }

    fn eval<T: Real>(&self, z: &[T]) -> Vec<T> {
        let n = self.model.state_dim();
        let (x, u) = z[1..].split_at(n);
        let mut out = Vec::with_capacity(z.len());
        out.push(T::cst(1.0));
        out.extend(self.model.dynamics(x, u));
        out.extend(self.dynamics.drift(u));
        out
    }
}

struct Series<T> {
    psi: Vec<T>,
    xi: Vec<Vec<T>>,
    phi: Vec<T>,
}

impl<T> Series<T> {
    fn composed(self, r: usize, d: usize) -> Vec<T> {
        let mut v = Vec::with_capacity(1 + self.xi.len() + self.phi.len());
        v.extend(self.psi.into_iter().nth(r));
        v.extend(self.xi.into_iter().filter_map(|c| c.into_iter().nth(d)));
        v.extend(self.phi);
        v
    }
}

fn chain<T: Real, const N: usize>(base: Jet<T, N>, gains: &[f64]) -> Vec<Jet<T, N>> {
    let mut out = Vec::with_capacity(gains.len() + 1);
    out.push(base);
    for &a in gains {
        let prev = *out.last().expect("chain starts non-empty");
        out.push(prev.differentiate() + prev.scale(a));
    }
    out
}

macro_rules! dispatch_jet_len {
    ($n:expr, $f:ident ( $($arg:expr),* )) => {
        match $n {
            2 => $f::<2, _>($($arg),*),
            3 => $f::<3, _>($($arg),*),
            4 => $f::<4, _>($($arg),*),
            5 => $f::<5, _>($($arg),*),
            6 => $f::<6, _>($($arg),*),
            7 => $f::<7, _>($($arg),*),
            8 => $f::<8, _>($($arg),*),
            n => Err(Error::usage(format!("jet truncation {n} is not supported"))),
        }
    };
}

/// Evaluates the chains and `h` for a cascade model.
#[derive(Debug, Clone)]
pub struct BarrierComposer<M> {
    pub model: M,
    pub dynamics: ControlDynamics,
    pub chain: HocbfChainConfig,
    pub epsilon: f64,
}

impl<M: CascadeModel> BarrierComposer<M> {
    pub fn new(model: M, dynamics: ControlDynamics, chain: HocbfChainConfig, epsilon: f64) -> Result<Self> {
        chain.validate()?;
        if dynamics.dim() != model.input_dim() {
            return Err(Error::usage(format!(
                "control dynamics are {}-dimensional but the model has {} inputs",
                dynamics.dim(),
                model.input_dim()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::usage("sharpness.epsilon must be positive"));
        }
        Ok(Self {
            model,
            dynamics,
            chain,
            epsilon,
        })
    }

    fn check_state(&self, state: &CascadeState) -> Result<()> {
        if state.x.len() != self.model.state_dim() || state.u.len() != self.model.input_dim() {
            return Err(Error::usage(format!(
                "cascade state has {}+{} entries, model expects {}+{}",
                state.x.len(),
                state.u.len(),
                self.model.state_dim(),
                self.model.input_dim()
            )));
        }
        Ok(())
    }

    fn series<T: Real, const N: usize>(&self, buffer: &BarrierBuffer, z0: &[T]) -> Result<Series<Jet<T, N>>> {
        let field = CascadeField {
            model: &self.model,
            dynamics: &self.dynamics,
        };
        let z = flow_series::<T, _, N>(&field, z0);
        let n = self.model.state_dim();
        let (t, x, u) = (z[0], &z[1..1 + n], &z[1 + n..]);
        let psi0 = buffer.eval_psi0(t, self.model.position(x))?;
        Ok(Series {
            psi: chain(psi0, &self.chain.psi_gains),
            xi: self
                .model
                .state_constraints(x)
                .into_iter()
                .map(|c| chain(c, &self.chain.xi_gains))
                .collect(),
            phi: self.model.input_constraints(u),
        })
    }

    /// Every chain stage and input constraint at `state`.
    pub fn components(&self, buffer: &BarrierBuffer, state: &CascadeState) -> Result<ComponentValues> {
        self.check_state(state)?;
        dispatch_jet_len!(self.chain.jet_len(), components_n(self, buffer, state))
    }

    /// `ψ_i` for `0 ≤ i ≤ r`.
    pub fn eval_psi_chain(&self, buffer: &BarrierBuffer, state: &CascadeState, i: usize) -> Result<f64> {
        if i > self.chain.r() {
            return Err(Error::usage(format!("ψ stage {i} exceeds r = {}", self.chain.r())));
        }
        Ok(self.components(buffer, state)?.psi[i])
    }

    /// `ξ_{j,i}` with `j` counted from 1.
    pub fn eval_xi_chain(&self, buffer: &BarrierBuffer, state: &CascadeState, j: usize, i: usize) -> Result<f64> {
        let c = self.components(buffer, state)?;
        if j == 0 || j > c.xi.len() || i > self.chain.d() {
            return Err(Error::usage(format!("ξ index ({j}, {i}) out of range")));
        }
        Ok(c.xi[j - 1][i])
    }

    /// `φ_j` with `j` counted from 1.
    pub fn eval_phi(&self, state: &CascadeState, j: usize) -> Result<f64> {
        self.check_state(state)?;
        let phi = self.model.input_constraints(&state.u);
        if j == 0 || j > phi.len() {
            return Err(Error::usage(format!("φ index {j} out of range 1..={}", phi.len())));
        }
        Ok(phi[j - 1])
    }

    /// `h`, `∂h/∂t`, `L_f̃ h` and `L_g̃ h` at `state`.
    pub fn eval_h(&self, buffer: &BarrierBuffer, state: &CascadeState) -> Result<BarrierEvaluation> {
        self.check_state(state)?;
        dispatch_jet_len!(self.chain.jet_len(), eval_h_n(self, buffer, state))
    }

    /// Signs of every chain stage, input constraint and `h`.
    pub fn check_membership(&self, buffer: &BarrierBuffer, state: &CascadeState) -> Result<MembershipReport> {
        let c = self.components(buffer, state)?;
        let mut entries = Vec::new();
        let mut add = |name: String, value: f64| {
            entries.push(MembershipEntry {
                name,
                value,
                sign: Sign::of(value),
            })
        };
        for (i, &v) in c.psi.iter().enumerate() {
            add(format!("psi_{i}"), v);
        }
        for (j, stages) in c.xi.iter().enumerate() {
            for (i, &v) in stages.iter().enumerate() {
                add(format!("xi_{}_{i}", j + 1), v);
            }
        }
        for (j, &v) in c.phi.iter().enumerate() {
            add(format!("phi_{}", j + 1), v);
        }
        add("h".into(), softmin_real(&c.composed(), self.epsilon)?);
        Ok(MembershipReport { entries })
    }
}

fn components_n<const N: usize, M: CascadeModel>(
    composer: &BarrierComposer<M>,
    buffer: &BarrierBuffer,
    state: &CascadeState,
) -> Result<ComponentValues> {
    let s = composer.series::<f64, N>(buffer, &state.augmented())?;
    let v = |j: &Jet<f64, N>| j.c[0];
    Ok(ComponentValues {
        psi: s.psi.iter().map(v).collect(),
        xi: s.xi.iter().map(|c| c.iter().map(v).collect()).collect(),
        phi: s.phi.iter().map(v).collect(),
    })
}

fn eval_h_n<const N: usize, M: CascadeModel>(
    composer: &BarrierComposer<M>,
    buffer: &BarrierBuffer,
    state: &CascadeState,
) -> Result<BarrierEvaluation> {
    type Inner = Jet<f64, 2>;
    let (r, d) = (composer.chain.r(), composer.chain.d());
    let z = state.augmented();
    let n = state.x.len();

    // Seed time: the inner derivative is ∂/∂t, the outer one ∂/∂t + L_f̃.
    let mut z0: Vec<Inner> = z.iter().map(|&v| Inner::new([v, 0.0])).collect();
    z0[0].c[1] = 1.0;
    let series = composer.series::<Inner, N>(buffer, &z0)?;
    let v = |j: &Jet<Inner, N>| j.c[0].c[0];
    let components = ComponentValues {
        psi: series.psi.iter().map(v).collect(),
        xi: series.xi.iter().map(|c| c.iter().map(v).collect()).collect(),
        phi: series.phi.iter().map(v).collect(),
    };
    let h_jet = softmin_real(&series.composed(r, d), composer.epsilon)?;
    let h = h_jet.c[0].c[0];
    let dh_dt = h_jet.c[0].c[1];
    let lf_h = h_jet.c[1].c[0] - dh_dt;

    let m = state.u.len();
    let mut lg_h = Vec::with_capacity(m);
    for j in 0..m {
        let mut z0: Vec<Inner> = z.iter().map(|&v| Inner::new([v, 0.0])).collect();
        for i in 0..m {
            z0[1 + n + i].c[1] = composer.dynamics.b(i, j);
        }
        let series = composer.series::<Inner, N>(buffer, &z0)?;
        let h_jet = softmin_real(&series.composed(r, d), composer.epsilon)?;
        lg_h.push(h_jet.c[0].c[1]);
    }

    Ok(BarrierEvaluation {
        h,
        dh_dt,
        lf_h,
        lg_h,
        components,
    })
}
