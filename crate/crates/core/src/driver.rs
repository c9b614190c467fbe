//! Outer Newton iteration, its parameter schedule, configuration and reports.

use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kam::{approx_inverse, reduce_step, ReductionState, StepReport};
use crate::linearized::{invert_l0, residual, ForcingMode, KdVProblem, LinearizedOperator};
use crate::regularize::assemble;
use crate::sieve::{diophantine_check, ResonanceRecord};
use crate::spectral::{FourierField, LambdaFamily, NormParams, Truncation};

/// Iteration constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub eps: f64,
    pub s: f64,
    pub alpha0: f64,
    pub tau0: f64,
    pub s0: u32,
    pub v: usize,
    /// Constant in the bound on `mu`.
    pub c: f64,
}

impl Schedule {
    /// Requires `0 < eps < alpha0 < min(1/100, s)`.
    pub fn new(eps: f64, s: f64, alpha0: f64, tau0: f64, s0: u32, v: usize) -> Result<Self> {
        if !(eps > 0.0 && eps < alpha0 && alpha0 < s.min(0.01)) {
            return Err(Error::Config(format!(
                "need 0 < eps < alpha0 < min(1/100, s); got eps = {eps:e}, alpha0 = {alpha0:e}, s = {s}"
            )));
        }
        if tau0 <= 0.0 || v == 0 {
            return Err(Error::Config("tau0 and v must be positive".into()));
        }
        Ok(Schedule { eps, s, alpha0, tau0, s0, v, c: 1.0 })
    }

    /// `eps^{(4/3)^{m-1}}`.
    pub fn eps_m(&self, m: usize) -> f64 {
        self.eps.powf((4.0f64 / 3.0).powi(m as i32 - 1))
    }

    /// `(10/11)^{n-1} s`.
    pub fn s_n(&self, n: usize) -> f64 {
        (10.0f64 / 11.0).powi(n as i32 - 1) * self.s
    }

    pub fn s_prime(&self, n: usize) -> f64 {
        99.0 / 101.0 * self.s_n(n)
    }

    pub fn sigma(&self, m: usize) -> f64 {
        self.s_n(m) / 200.0
    }

    /// `(alpha0 / 2^m)(1 + 2^{-(n-m)})`.
    pub fn alpha_mn(&self, m: usize, n: usize) -> f64 {
        self.alpha0 / 2f64.powi(m as i32) * (1.0 + 2f64.powi(-(n as i32 - m as i32)))
    }

    pub fn c_d(&self, m: usize) -> f64 {
        (1.0 + 2f64.powi(-(m as i32 + 1))) / 2.0
    }

    pub fn c_lambda(&self, m: usize) -> f64 {
        (2.0 - 2f64.powi(-(m as i32))) * self.eps
    }

    pub fn c_mu(&self, m: usize) -> f64 {
        self.c * (2.0 - 2f64.powi(-(m as i32))) * self.eps
    }

    pub fn p(&self) -> f64 {
        2.0 * self.s0 as f64 + 5.0
    }

    pub fn eta(&self) -> f64 {
        4.0 * self.s0 as f64 + self.tau0 + 9.0
    }

    /// Exponent of the second non-resonance floor.
    pub fn tau(&self) -> f64 {
        self.v as f64 + 2.0
    }
}

/// `(1, g, sqrt 2, sqrt 3, sqrt 5, sqrt 7)` truncated to `v` entries, `g` the golden ratio.
pub fn default_omega_bar(v: usize) -> Vec<f64> {
    let base = [1.0, 0.5 * (1.0 + 5f64.sqrt()), 2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt(), 7f64.sqrt()];
    base.iter().copied().cycle().take(v).collect()
}

fn d_v() -> usize {
    2
}
fn d_kphi() -> usize {
    8
}
fn d_kx() -> usize {
    16
}
fn d_alpha0() -> f64 {
    5e-3
}
fn d_eps() -> f64 {
    1e-4
}
fn d_eps0() -> f64 {
    1e-2
}
fn d_s() -> f64 {
    0.1
}
fn d_max_steps() -> usize {
    6
}
fn d_tol() -> f64 {
    1e-10
}
fn d_lmin() -> f64 {
    0.5
}
fn d_lmax() -> f64 {
    1.5
}
fn d_count() -> usize {
    1
}
fn d_dioph_l() -> u32 {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default = "d_v")]
    pub v: usize,
    #[serde(default = "d_kphi")]
    pub kphi: usize,
    #[serde(default = "d_kx")]
    pub kx: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { v: d_v(), kphi: d_kphi(), kx: d_kx() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub omega_bar: Option<Vec<f64>>,
    pub tau0: Option<f64>,
    pub alpha0: Option<f64>,
    /// `|l|_1` bound of the startup Diophantine certificate.
    pub certify_l: Option<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub ell: Vec<i32>,
    pub k: i32,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_eps0")]
    pub eps0: f64,
    /// Regularity index of the forcing norm; defaults to `p + eta + 2 tau0 + 1`.
    pub q: Option<f64>,
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
    /// JSON field file holding `d_x f`, used instead of `modes`.
    pub file: Option<String>,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        ForcingConfig { eps: d_eps(), eps0: d_eps0(), q: None, modes: Vec::new(), file: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormConfig {
    #[serde(default = "d_s")]
    pub s: f64,
    pub s0: Option<u32>,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { s: d_s(), s0: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonConfig {
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { max_steps: d_max_steps(), tol: d_tol() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    #[serde(default = "d_lmin")]
    pub min: f64,
    #[serde(default = "d_lmax")]
    pub max: f64,
    #[serde(default = "d_count")]
    pub count: usize,
    /// Explicit values, overriding the uniform grid.
    pub values: Option<Vec<f64>>,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig { min: d_lmin(), max: d_lmax(), count: d_count(), values: None }
    }
}

/// Run configuration, read from TOML.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub frequency: FrequencyConfig,
    #[serde(default)]
    pub forcing: ForcingConfig,
    #[serde(default)]
    pub norm: NormConfig,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    /// The reference setup: `v = 2`, `Kphi = 8`, `Kx = 16`, `eps = 1e-4`,
    /// forcing on the lowest modes, regularity index 0.
    pub fn reference() -> Self {
        let mode = |ell: [i32; 2], k, re, im| ModeConfig { ell: ell.to_vec(), k, re, im };
        Config {
            forcing: ForcingConfig {
                q: Some(0.0),
                modes: vec![mode([1, 0], 1, 1.0, 0.0), mode([0, 1], 1, 0.0, 0.5), mode([1, -1], 2, 0.3, 0.3)],
                ..ForcingConfig::default()
            },
            ..Config::default()
        }
    }

    pub fn tau0(&self) -> f64 {
        self.frequency.tau0.unwrap_or(self.truncation.v as f64 - 1.0 + 0.2)
    }

    pub fn s0(&self) -> u32 {
        self.norm.s0.unwrap_or((self.truncation.v as u32 + 2) / 2 + 1)
    }

    pub fn omega_bar(&self) -> Vec<f64> {
        self.frequency.omega_bar.clone().unwrap_or_else(|| default_omega_bar(self.truncation.v))
    }

    pub fn alpha0(&self) -> f64 {
        self.frequency.alpha0.unwrap_or(d_alpha0())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Schedule::new(self.forcing.eps, self.norm.s, self.alpha0(), self.tau0(), self.s0(), self.truncation.v)
    }

    pub fn q(&self) -> Result<f64> {
        let sc = self.schedule()?;
        Ok(self.forcing.q.unwrap_or(sc.p() + sc.eta() + 2.0 * sc.tau0 + 1.0))
    }

    pub fn lambdas(&self) -> Vec<f64> {
        if let Some(v) = &self.lambda.values {
            return v.clone();
        }
        let l = &self.lambda;
        if l.count <= 1 {
            return vec![0.5 * (l.min + l.max)];
        }
        (0..l.count).map(|i| l.min + (l.max - l.min) * i as f64 / (l.count - 1) as f64).collect()
    }

    /// Builds the problem after checking the schedule and certifying `omega_bar`.
    pub fn problem(&self) -> Result<KdVProblem> {
        let t = &self.truncation;
        if t.v == 0 || t.kx == 0 {
            return Err(Error::Config("v and Kx must be positive".into()));
        }
        let sc = self.schedule()?;
        let omega_bar = self.omega_bar();
        if omega_bar.len() != t.v {
            return Err(Error::Config(format!("omega_bar has {} entries, v = {}", omega_bar.len(), t.v)));
        }
        let cert_l = self.frequency.certify_l.unwrap_or(if t.v <= 2 { d_dioph_l() } else { 20 });
        let dio = diophantine_check(&omega_bar, sc.alpha0, sc.tau0, cert_l);
        if !dio.pass {
            return Err(Error::Config(format!(
                "omega_bar fails the Diophantine bound at l = {:?}; largest admissible alpha0 = {:.3e}",
                dio.worst_ell, dio.max_alpha
            )));
        }
        let lambdas = self.lambdas();
        let family = LambdaFamily::new(lambdas.iter().map(|&l| (l, ())).collect(), omega_bar, sc.alpha0, sc.tau0)?;
        let norm = NormParams::new(self.norm.s, 0.0, sc.s0)?;
        let q = self.q()?;
        let tr = Truncation::new(t.v, t.kphi, t.kx);
        match &self.forcing.file {
            Some(path) => {
                let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{path}: {e}")))?;
                let f = FourierField::from_json(&s)?.embed(&tr).with_real_flag(true);
                KdVProblem::new(f, family, norm, q, self.forcing.eps0)
            }
            None => {
                let modes: Vec<ForcingMode> = self
                    .forcing
                    .modes
                    .iter()
                    .map(|m| ForcingMode { ell: m.ell.clone(), k: m.k, amp: C64::new(m.re, m.im) })
                    .collect();
                KdVProblem::from_modes(&tr, &modes, self.forcing.eps, family, norm, q, self.forcing.eps0)
            }
        }
    }
}

/// Norm in which residuals are measured: `|| . ||_{s, 0}`.
pub fn residual_norm(f: &FourierField, s: f64) -> f64 {
    f.norm_sp(&NormParams { s, p: 0.0, s0: 0 })
}

/// `u_1 = L(0)^{-1} d_x f` by diagonal division.
pub fn initial_solution(prob: &KdVProblem, lambda: f64, sched: &Schedule) -> Result<FourierField> {
    let omega = prob.omega(lambda);
    invert_l0(&prob.forcing, &omega, sched.alpha_mn(1, 1), sched.tau())
}

/// Diagnostics of one Newton step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OuterStep {
    pub n: usize,
    /// `||F(u_n)||` before the step.
    pub residual_before: f64,
    /// `||F(u_{n+1})||`.
    pub residual: f64,
    pub correction: f64,
    /// `||L v + F(u_n)||`, left by the discarded remainder.
    pub linear_defect: f64,
    /// `||F(u_n + v) - F(u_n) - L v||`.
    pub quadratic: f64,
    pub m: f64,
    /// `||v|| <= eps_{n+1}` and `||u_{n+1}|| <= 2 eps`.
    pub h1_holds: bool,
    pub kam: Vec<StepReport>,
    pub wall_seconds: f64,
}

/// `u_{n+1} = u_n - W2 J^{-1} W1^{-1} F(u_n)` after `n` reduction steps.
pub fn newton_step(
    u: &FourierField,
    prob: &KdVProblem,
    lambda: f64,
    sched: &Schedule,
    n: usize,
) -> Result<(FourierField, OuterStep)> {
    let start = Instant::now();
    let omega = prob.omega(lambda);
    let floor = prob.floor(lambda);
    let s = sched.s_n(n);
    let f = residual(u, prob, &omega);
    let reg = assemble(u, &omega, &floor)?;
    let mut state = ReductionState::new(&reg, NormParams { s: sched.s_prime(n), p: 0.0, s0: sched.s0 });
    let mut kam = Vec::with_capacity(n);
    for _ in 0..n {
        let (next, rep) = reduce_step(&state, sched, n)?;
        state = next;
        kam.push(rep);
    }
    let v = approx_inverse(&reg, &state, &f.scale(-1.0), sched.alpha_mn(n, n), sched.tau())?;
    let u_next = u + &v;
    let f_next = residual(&u_next, prob, &omega);
    let lv = LinearizedOperator::new(u, &omega).apply(&v);
    let correction = residual_norm(&v, s);
    let step = OuterStep {
        n,
        residual_before: residual_norm(&f, s),
        residual: residual_norm(&f_next, s),
        correction,
        linear_defect: residual_norm(&(&lv + &f), s),
        quadratic: residual_norm(&(&(&f_next - &f) - &lv), s),
        m: reg.m,
        h1_holds: correction <= sched.eps_m(n + 1) && residual_norm(&u_next, s) <= 2.0 * sched.eps,
        kam,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((u_next, step))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Status {
    Converged,
    NotConverged,
    Diverged,
    Excluded { record: ResonanceRecord },
    Failed { message: String },
}

/// Outcome at one parameter value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaReport {
    pub lambda: f64,
    pub status: Status,
    /// `||F(u_1)||` after the initial solve.
    pub initial_residual: f64,
    /// `||F(u_1)|| / ||u_1||^2`, bounded for the quadratic estimate.
    pub initial_ratio: f64,
    pub steps: Vec<OuterStep>,
    pub final_residual: f64,
    /// Scaled bookkeeping `||u_n||` per iterate.
    pub solution_norms: Vec<f64>,
    /// `||F(u)||` of the final iterate on a grid of twice the resolution.
    pub doubled_residual: Option<f64>,
    #[serde(skip)]
    pub solution: Option<FourierField>,
    pub wall_seconds: f64,
}

impl LambdaReport {
    /// Residual sequence `||F(u_1)||, ||F(u_2)||, ...`.
    pub fn residuals(&self) -> Vec<f64> {
        std::iter::once(self.initial_residual).chain(self.steps.iter().map(|s| s.residual)).collect()
    }

    /// Number of iterates `u_1, ..., u_N` produced.
    pub fn iterates(&self) -> usize {
        1 + self.steps.len()
    }
}

/// Runs the iteration at one `lambda`.
pub fn solve_lambda(prob: &KdVProblem, sched: &Schedule, newton: &NewtonConfig, lambda: f64) -> LambdaReport {
    let start = Instant::now();
    let mut rep = LambdaReport {
        lambda,
        status: Status::NotConverged,
        initial_residual: f64::NAN,
        initial_ratio: f64::NAN,
        steps: Vec::new(),
        final_residual: f64::NAN,
        solution_norms: Vec::new(),
        doubled_residual: None,
        solution: None,
        wall_seconds: 0.0,
    };
    let omega = prob.omega(lambda);
    let fail = |e: Error| match e {
        Error::Excluded(r) => Status::Excluded { record: *r },
        other => Status::Failed { message: other.to_string() },
    };
    let mut u = match initial_solution(prob, lambda, sched) {
        Ok(u) => u,
        Err(e) => {
            rep.status = fail(e);
            rep.wall_seconds = start.elapsed().as_secs_f64();
            return rep;
        }
    };
    let mut res = residual_norm(&residual(&u, prob, &omega), sched.s_n(1));
    rep.initial_residual = res;
    let u1 = residual_norm(&u, sched.s_n(1));
    rep.initial_ratio = if u1 > 0.0 { res / (u1 * u1) } else { 0.0 };
    rep.solution_norms.push(u1);
    for n in 1..=newton.max_steps {
        if res <= newton.tol {
            rep.status = Status::Converged;
            break;
        }
        match newton_step(&u, prob, lambda, sched, n) {
            Ok((next, step)) => {
                let diverged = !(step.residual < res);
                res = step.residual;
                rep.steps.push(step);
                if diverged {
                    rep.status = Status::Diverged;
                    break;
                }
                u = next;
                rep.solution_norms.push(residual_norm(&u, sched.s_n(n + 1)));
            }
            Err(e) => {
                rep.status = fail(e);
                break;
            }
        }
    }
    if rep.status == Status::NotConverged && res <= newton.tol {
        rep.status = Status::Converged;
    }
    rep.final_residual = res;
    if rep.status == Status::Converged {
        rep.doubled_residual = Some(doubled_residual(&u, prob, lambda, sched.s_n(rep.iterates())));
    }
    rep.solution = Some(u);
    rep.wall_seconds = start.elapsed().as_secs_f64();
    rep
}

/// Residual after embedding `u` and the forcing into twice the truncation.
pub fn doubled_residual(u: &FourierField, prob: &KdVProblem, lambda: f64, s: f64) -> f64 {
    let tr = u.trunc();
    let fine = Truncation::new(tr.v, 2 * tr.kphi, 2 * tr.kx);
    let p = prob.embed(&fine);
    residual_norm(&residual(&u.embed(&fine), &p, &prob.omega(lambda)), s)
}

/// Reports for every `lambda` of a configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: Config,
    pub schedule: Schedule,
    pub forcing_size: f64,
    pub lambdas: Vec<LambdaReport>,
    pub wall_seconds: f64,
}

impl RunReport {
    /// 0 if every value converged, 2 if the only failures are exclusions, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        let mut code = 0;
        for l in &self.lambdas {
            match l.status {
                Status::Converged => {}
                Status::Excluded { .. } => code = code.max(2),
                _ => return 1,
            }
        }
        code
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run report serializes")
    }

    /// Rows `(lambda, n, residual, correction, linear_defect, quadratic, wall)`,
    /// with `n = 1` the initial solve.
    pub fn convergence_rows(&self) -> Vec<ConvergenceRow> {
        let mut rows = Vec::new();
        for l in &self.lambdas {
            rows.push(ConvergenceRow {
                lambda: l.lambda,
                n: 1,
                residual: l.initial_residual,
                correction: l.solution_norms.first().copied().unwrap_or(f64::NAN),
                linear_defect: f64::NAN,
                quadratic: f64::NAN,
                wall_seconds: 0.0,
            });
            for s in &l.steps {
                rows.push(ConvergenceRow {
                    lambda: l.lambda,
                    n: s.n + 1,
                    residual: s.residual,
                    correction: s.correction,
                    linear_defect: s.linear_defect,
                    quadratic: s.quadratic,
                    wall_seconds: s.wall_seconds,
                });
            }
        }
        rows
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub lambda: f64,
    pub n: usize,
    pub residual: f64,
    pub correction: f64,
    pub linear_defect: f64,
    pub quadratic: f64,
    pub wall_seconds: f64,
}

/// Runs every `lambda` of the configuration, or only `only` if given.
pub fn run(cfg: &Config, only: Option<f64>) -> Result<RunReport> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(l) = only {
        cfg.lambda.values = Some(vec![l]);
    }
    let prob = cfg.problem()?;
    let sched = cfg.schedule()?;
    let lambdas = cfg.lambdas();
    let reports = solve_all(&prob, &sched, &cfg.newton, &lambdas);
    Ok(RunReport {
        forcing_size: prob.eps,
        config: cfg,
        schedule: sched,
        lambdas: reports,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Solves every `lambda` on a pool of worker threads; the result is sorted by `lambda`.
pub fn solve_all(prob: &KdVProblem, sched: &Schedule, newton: &NewtonConfig, lambdas: &[f64]) -> Vec<LambdaReport> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(lambdas.len()).max(1);
    let next = AtomicUsize::new(0);
    let out = Mutex::new(Vec::with_capacity(lambdas.len()));
    std::thread::scope(|sc| {
        for _ in 0..workers {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&l) = lambdas.get(i) else { break };
                let r = solve_lambda(prob, sched, newton, l);
                out.lock().expect("report lock").push(r);
            });
        }
    });
    let mut v = out.into_inner().expect("report lock");
    v.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    v
}

/// Least-squares slope of `log r_{n+1}` against `log r_n`.
pub fn fitted_exponent(residuals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = residuals
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| (w[0].ln(), w[1].ln()))
        .collect();
    if pts.is_empty() {
        return None;
    }
    if pts.len() == 1 {
        return Some(pts[0].1 / pts[0].0);
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mx) * (p.1 - my), a.1 + (p.0 - mx).powi(2)));
    (den > 0.0).then(|| num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_sequences() {
        let s = Schedule::new(1e-4, 0.1, 5e-3, 1.2, 2, 2).unwrap();
        assert!((s.eps_m(1) - 1e-4).abs() < 1e-20);
        assert!((s.eps_m(2) - 1e-4f64.powf(4.0 / 3.0)).abs() < 1e-20);
        assert_eq!(s.alpha_mn(1, 1), 5e-3);
        assert!(s.alpha_mn(2, 3) < s.alpha_mn(1, 3));
        assert!((s.s_prime(1) - 0.1 * 99.0 / 101.0).abs() < 1e-15);
        assert_eq!(s.p(), 9.0);
        assert!((s.eta() - 18.2).abs() < 1e-12);
        assert_eq!(s.tau(), 4.0);
        assert!(Schedule::new(1e-2, 0.1, 5e-3, 1.2, 2, 2).is_err());
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = Config::from_toml("[truncation]\nkphi = 4\nkx = 8\n").unwrap();
        assert_eq!((c.truncation.v, c.truncation.kphi, c.truncation.kx), (2, 4, 8));
        assert_eq!(c.s0(), 3);
        assert!(Config::from_toml("[truncation]\nbogus = 1\n").is_err());
        assert!(Config::from_toml("not toml = = 1").is_err());
    }

    #[test]
    fn zero_forcing_converges_immediately() {
        let mut c = Config { truncation: TruncationConfig { v: 2, kphi: 3, kx: 6 }, ..Config::default() };
        c.lambda.values = Some(vec![1.1]);
        let rep = run(&c, None).unwrap();
        let l = &rep.lambdas[0];
        assert_eq!(l.status, Status::Converged);
        assert!(l.steps.is_empty());
        assert_eq!(l.solution.as_ref().unwrap().max_coeff(), 0.0);
        assert_eq!(rep.exit_code(), 0);
    }

    #[test]
    fn single_mode_initial_solution() {
        let mut c = Config::reference();
        c.truncation = TruncationConfig { v: 2, kphi: 3, kx: 6 };
        c.forcing.modes.truncate(1);
        let prob = c.problem().unwrap();
        let sched = c.schedule().unwrap();
        let u = initial_solution(&prob, 1.1, &sched).unwrap();
        let w = prob.omega(1.1);
        let want = prob.forcing.get(&[1, 0], 1) / (crate::spectral::I * (w[0] + 1.0));
        assert!((u.get(&[1, 0], 1) - want).norm() < 1e-18);
    }

    #[test]
    fn resonant_lambda_is_excluded() {
        let mut c = Config::reference();
        c.truncation = TruncationConfig { v: 2, kphi: 3, kx: 6 };
        // omega.(-1, 0) + 1^5 = 0 at lambda = 1
        c.forcing.modes = vec![ModeConfig { ell: vec![-1, 0], k: 1, re: 1.0, im: 0.0 }];
        c.lambda.values = Some(vec![1.0, 1.1]);
        let rep = run(&c, None).unwrap();
        assert!(matches!(&rep.lambdas[0].status, Status::Excluded { record } if record.ell == vec![-1, 0]));
        assert_eq!(rep.lambdas[1].status, Status::Converged);
        assert_eq!(rep.exit_code(), 2);
    }

    #[test]
    fn exponent_fit() {
        let r = [1e-4, 1e-8, 1e-16];
        assert!((fitted_exponent(&r).unwrap() - 2.0).abs() < 0.2);
    }
}
