//! Reducibility of `Lf = omega.d + D + R` to `omega.d + D_n + R_n` with a
//! small remainder, and the approximate inverse built from it.
//!
//! `D = diag(i (d_k + mu_k(theta)))`. Each step solves
//! `omega.d Phi + [D, Phi] + R - diag R = 0` blockwise and conjugates by `e^Phi`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::decay::{space_mode, DecayKind, OperatorJson, VarCoeffOperator};
use crate::driver::Schedule;
use crate::error::{Error, Result};
use crate::regularize::RegularizedOperator;
use crate::sieve::ResonanceRecord;
use crate::spectral::{FieldJson, FourierField, NormParams, Truncation, I, ZERO};

/// Accuracy required of every scalar small-divisor solve.
pub const KUKSIN_RESIDUAL_TOL: f64 = 1e-10;
/// Largest accepted condition estimate of a dense solve.
pub const KUKSIN_COND_MAX: f64 = 1e12;
/// Truncation tolerance of operator exponentials.
pub const EXP_TOL: f64 = 1e-16;
const JACOBI_MAX_ITER: usize = 200;
const JACOBI_MAX_RATE: f64 = 0.5;

/// Eigenvalue data `d_k` and zero-mean corrections `mu_k(theta)`.
#[derive(Clone, Debug)]
pub struct DiagonalModel {
    trunc: Arc<Truncation>,
    pub m: f64,
    d: Vec<f64>,
    /// `mu_k` stored as the `k`-th space mode of a field.
    mu: FourierField,
}

impl DiagonalModel {
    /// `d_k = m k^5`, `mu = 0`.
    pub fn unperturbed(trunc: &Arc<Truncation>, m: f64) -> Self {
        let kx = trunc.kx;
        let d = (0..2 * kx).map(|p| m * (space_mode(kx, p) as f64).powi(5)).collect();
        DiagonalModel { trunc: trunc.clone(), m, d, mu: FourierField::zeros(trunc, false) }
    }

    /// Validates ordering, zero mean of `mu` and `|d_i - d_j| >= c_d |i^5 - j^5|`.
    pub fn new(trunc: &Arc<Truncation>, m: f64, d: Vec<f64>, mu: FourierField, c_d: f64) -> Result<Self> {
        let kx = trunc.kx;
        if d.len() != 2 * kx {
            return Err(Error::Domain(format!("expected {} eigenvalues, got {}", 2 * kx, d.len())));
        }
        let dm = DiagonalModel { trunc: trunc.clone(), m, d, mu: mu.with_real_flag(false) };
        let z = trunc.zero_index();
        for k in dm.modes() {
            if dm.mu.at(z, k).norm() > 1e-12 * (1.0 + dm.mu.max_coeff()) {
                return Err(Error::Domain(format!("mu_{k} has nonzero mean")));
            }
        }
        let sorted = (1..2 * kx).all(|p| dm.d[p - 1] < dm.d[p]);
        if !sorted || (kx > 0 && !(dm.d(-1) < 0.0 && dm.d(1) > 0.0)) {
            return Err(Error::Domain("eigenvalues are not strictly increasing through zero".into()));
        }
        let sep = dm.separation();
        if sep < c_d {
            return Err(Error::Domain(format!("eigenvalue separation {sep:.3e} below {c_d:.3e}")));
        }
        Ok(dm)
    }

    pub fn trunc(&self) -> &Arc<Truncation> {
        &self.trunc
    }

    pub fn modes(&self) -> impl Iterator<Item = i32> + '_ {
        (0..2 * self.trunc.kx).map(|p| space_mode(self.trunc.kx, p))
    }

    pub fn d(&self, k: i32) -> f64 {
        self.d[crate::decay::space_pos(self.trunc.kx, k)]
    }

    pub fn mu(&self, k: i32) -> Vec<C64> {
        self.mu.x_mode(k)
    }

    pub fn mu_field(&self) -> &FourierField {
        &self.mu
    }

    pub fn eigenvalues(&self) -> Vec<(i32, f64)> {
        self.modes().map(|k| (k, self.d(k))).collect()
    }

    /// `r_k = (d_k - m k^5) / k^3`.
    pub fn r(&self, k: i32) -> f64 {
        (self.d(k) - self.m * (k as f64).powi(5)) / (k as f64).powi(3)
    }

    /// `min_{i != j} |d_i - d_j| / |i^5 - j^5|`.
    pub fn separation(&self) -> f64 {
        let ev = self.eigenvalues();
        let mut min = f64::INFINITY;
        for &(i, di) in &ev {
            for &(j, dj) in &ev {
                if i != j {
                    min = min.min((di - dj).abs() / ((i as f64).powi(5) - (j as f64).powi(5)).abs());
                }
            }
        }
        min
    }

    /// `sum_l |mu_k,l| e^{|l| s}`.
    pub fn mu_norm(&self, k: i32, s: f64) -> f64 {
        let tr = &self.trunc;
        self.mu(k).iter().enumerate().map(|(t, z)| z.norm() * (tr.l1(t) as f64 * s).exp()).sum()
    }

    /// `D` as an operator with blocks `i (d_k + mu_k)` on the diagonal.
    pub fn as_operator(&self) -> VarCoeffOperator {
        let tr = &self.trunc;
        let z = tr.zero_index();
        let mut a = VarCoeffOperator::zeros(tr).with_hamiltonian(true);
        for k in self.modes() {
            let mu = self.mu(k);
            let b = a.block_mut(k, k);
            for (t, x) in b.iter_mut().enumerate() {
                *x = I * mu[t];
            }
            b[z] += I * self.d(k);
        }
        a
    }

    /// Absorbs `diag R`: `d+ = d + Im mean R_kk`, `mu+ = mu - i (R_kk - mean R_kk)`.
    /// Returns the model and the largest `|Re mean R_kk|`.
    pub fn absorb(&self, r: &VarCoeffOperator) -> (DiagonalModel, f64) {
        let tr = &self.trunc;
        let z = tr.zero_index();
        let mut out = self.clone();
        let mut defect: f64 = 0.0;
        for k in self.modes() {
            let b = r.block(k, k);
            let mean = b[z];
            defect = defect.max(mean.re.abs());
            out.d[crate::decay::space_pos(tr.kx, k)] += mean.im;
            let mut mu = self.mu(k);
            for (t, m) in mu.iter_mut().enumerate() {
                if t != z {
                    *m -= I * b[t];
                }
            }
            out.mu.set_x_mode(k, &mu);
        }
        (out, defect)
    }

    pub fn to_json_value(&self) -> DiagonalJson {
        DiagonalJson { m: self.m, d: self.eigenvalues(), mu: self.mu.to_json_value() }
    }

    pub fn from_json_value(j: &DiagonalJson, trunc: &Arc<Truncation>) -> Result<Self> {
        let mut d = vec![0.0; 2 * trunc.kx];
        if j.d.len() != d.len() {
            return Err(Error::Serde("eigenvalue list does not match the truncation".into()));
        }
        for &(k, v) in &j.d {
            d[crate::decay::space_pos(trunc.kx, k)] = v;
        }
        let mu = FourierField::from_json_value(&j.mu, Some(trunc))?;
        Ok(DiagonalModel { trunc: trunc.clone(), m: j.m, d, mu: mu.with_real_flag(false) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalJson {
    pub m: f64,
    pub d: Vec<(i32, f64)>,
    pub mu: FieldJson,
}

/// How a scalar small-divisor equation was solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KuksinMethod {
    Diagonal,
    Jacobi,
    Dense,
}

#[derive(Clone, Debug)]
pub struct KuksinSolution {
    pub u: Vec<C64>,
    pub method: KuksinMethod,
    pub iterations: usize,
    /// `||residual|| / ||p||` in l2.
    pub residual: f64,
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `-i omega.d u + d u + mu(theta) u = p` over the retained torus modes.
/// Every divisor must satisfy `|omega.l + d| >= floor / [l]^tau`.
pub fn kuksin_solve(
    trunc: &Truncation,
    d: f64,
    mu: &[C64],
    p: &[C64],
    omega: &[f64],
    floor: f64,
    tau: f64,
) -> Result<KuksinSolution> {
    let nt = trunc.nt();
    let mut div = vec![0.0; nt];
    for (t, dv) in div.iter_mut().enumerate() {
        *dv = trunc.omega_dot(t, omega) + d;
        let thr = floor / trunc.bracket(t).powf(tau);
        if dv.abs() < thr {
            return Err(Error::SmallDivisor { ell: trunc.ell(t).to_vec(), divisor: *dv, floor: thr });
        }
    }
    let pn = l2(p);
    if pn == 0.0 {
        return Ok(KuksinSolution { u: vec![ZERO; nt], method: KuksinMethod::Diagonal, iterations: 0, residual: 0.0 });
    }
    let mu_l1: f64 = mu.iter().map(|z| z.norm()).sum();
    if mu_l1 == 0.0 {
        let u = p.iter().zip(&div).map(|(x, dv)| x / dv).collect();
        return Ok(KuksinSolution { u, method: KuksinMethod::Diagonal, iterations: 0, residual: 0.0 });
    }
    let residual = |u: &[C64]| {
        let conv = trunc.torus_convolve(mu, u);
        let r: Vec<C64> = (0..nt).map(|t| div[t] * u[t] + conv[t] - p[t]).collect();
        l2(&r) / pn
    };
    let min_div = div.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    if mu_l1 / min_div < JACOBI_MAX_RATE {
        let mut u: Vec<C64> = p.iter().zip(&div).map(|(x, dv)| x / dv).collect();
        for it in 1..=JACOBI_MAX_ITER {
            let conv = trunc.torus_convolve(mu, &u);
            let mut change: f64 = 0.0;
            for t in 0..nt {
                let nu = (p[t] - conv[t]) / div[t];
                change = change.max((nu - u[t]).norm());
                u[t] = nu;
            }
            let size = u.iter().fold(0.0f64, |a, z| a.max(z.norm()));
            if change <= 1e-16 * size {
                let res = residual(&u);
                if res <= KUKSIN_RESIDUAL_TOL {
                    return Ok(KuksinSolution { u, method: KuksinMethod::Jacobi, iterations: it, residual: res });
                }
                break;
            }
        }
    }
    let u = dense_solve(trunc, &div, mu, p)?;
    let res = residual(&u);
    if res > KUKSIN_RESIDUAL_TOL {
        return Err(Error::Numerical(format!("small-divisor solve residual {res:.3e}")));
    }
    Ok(KuksinSolution { u, method: KuksinMethod::Dense, iterations: 0, residual: res })
}

fn dense_solve(trunc: &Truncation, div: &[f64], mu: &[C64], p: &[C64]) -> Result<Vec<C64>> {
    let nt = trunc.nt();
    let v = trunc.v;
    let mut a = DMatrix::<C64>::zeros(nt, nt);
    let mut diff = vec![0i32; v];
    for r in 0..nt {
        a[(r, r)] += C64::new(div[r], 0.0);
        for c in 0..nt {
            for (q, x) in diff.iter_mut().enumerate() {
                *x = trunc.ell(r)[q] - trunc.ell(c)[q];
            }
            if let Some(t) = trunc.torus_index(&diff) {
                a[(r, c)] += mu[t];
            }
        }
    }
    let lu = a.lu();
    let u_diag = lu.u().diagonal();
    let (mx, mn) = u_diag.iter().fold((0.0f64, f64::INFINITY), |(a, b), z| (a.max(z.norm()), b.min(z.norm())));
    if mn == 0.0 || mx / mn > KUKSIN_COND_MAX {
        return Err(Error::Numerical(format!("small-divisor system ill-conditioned (estimate {:.3e})", mx / mn)));
    }
    let b = nalgebra::DVector::from_column_slice(p);
    let x = lu.solve(&b).ok_or_else(|| Error::Numerical("singular small-divisor system".into()))?;
    Ok(x.iter().copied().collect())
}

/// Blockwise solution of `omega.d Phi + [D, Phi] + R - diag R = 0` with the
/// second non-resonance floor `alpha |i^5 - j^5| / [l]^tau`.
pub fn homological_solve(
    dm: &DiagonalModel,
    r: &VarCoeffOperator,
    omega: &[f64],
    alpha: f64,
    tau: f64,
) -> Result<VarCoeffOperator> {
    let tr = dm.trunc().clone();
    let mut phi = VarCoeffOperator::zeros(&tr).with_hamiltonian(r.is_hamiltonian());
    let mus: Vec<Vec<C64>> = dm.modes().map(|k| dm.mu(k)).collect();
    let n = phi.size();
    let mut mu = vec![ZERO; tr.nt()];
    let mut rhs = vec![ZERO; tr.nt()];
    for a in 0..n {
        let i = space_mode(tr.kx, a);
        for b in 0..n {
            if a == b {
                continue;
            }
            let j = space_mode(tr.kx, b);
            let blk = r.block(i, j);
            for t in 0..tr.nt() {
                mu[t] = mus[a][t] - mus[b][t];
                rhs[t] = I * blk[t];
            }
            let gap = ((i as f64).powi(5) - (j as f64).powi(5)).abs();
            let sol = kuksin_solve(&tr, dm.d(i) - dm.d(j), &mu, &rhs, omega, alpha * gap, tau).map_err(|e| match e {
                Error::SmallDivisor { ell, divisor, floor } => {
                    Error::Excluded(Box::new(ResonanceRecord::second(ell, i, j, divisor, floor)))
                }
                other => other,
            })?;
            phi.block_mut(i, j).copy_from_slice(&sol.u);
        }
    }
    Ok(phi)
}

/// `[D, X]` computed blockwise: `i (d_i - d_j) X_ij + i (mu_i X_ij - X_ij mu_j)`.
pub fn diagonal_commutator(dm: &DiagonalModel, x: &VarCoeffOperator) -> VarCoeffOperator {
    let tr = dm.trunc().clone();
    let np = tr.dealias_phi();
    let mug: Vec<Vec<C64>> = dm.modes().map(|k| tr.torus_to_grid(&dm.mu(k), np)).collect();
    let mut out = VarCoeffOperator::zeros(&tr).with_hamiltonian(x.is_hamiltonian());
    let n = out.size();
    let has_mu = dm.mu_field().max_coeff() > 0.0;
    for a in 0..n {
        let i = space_mode(tr.kx, a);
        for b in 0..n {
            let j = space_mode(tr.kx, b);
            let blk = x.block(i, j);
            if blk.iter().all(|z| *z == ZERO) {
                continue;
            }
            let dd = I * (dm.d(i) - dm.d(j));
            let mut res: Vec<C64> = blk.iter().map(|z| dd * z).collect();
            if has_mu && a != b {
                let mut g = tr.torus_to_grid(blk, np);
                for (p, z) in g.iter_mut().enumerate() {
                    *z *= I * (mug[a][p] - mug[b][p]);
                }
                let conv = tr.torus_from_grid(g, np);
                res.iter_mut().zip(conv).for_each(|(r, c)| *r += c);
            }
            out.block_mut(i, j).copy_from_slice(&res);
        }
    }
    out
}

fn plain(np: &NormParams) -> NormParams {
    NormParams { s: np.s, p: 0.0, s0: np.s0 }
}

/// `||omega.d Phi + [D, Phi] + R - diag R|| / ||R||` with products taken
/// through the operator algebra.
pub fn homological_residual(dm: &DiagonalModel, r: &VarCoeffOperator, phi: &VarCoeffOperator, omega: &[f64]) -> f64 {
    let d = dm.as_operator();
    let comm = d.mul(phi).sub(&phi.mul(&d));
    let res = phi.dphi_omega(omega).add(&comm).add(&r.off_diagonal());
    let np = NormParams { s: 0.0, p: 0.0, s0: 0 };
    let rn = r.decay_norm(DecayKind::Plain, &np);
    if rn == 0.0 {
        return res.decay_norm(DecayKind::Plain, &np);
    }
    res.decay_norm(DecayKind::Plain, &np) / rn
}

/// One conjugation `e^Phi` with its inverse.
#[derive(Clone, Debug)]
pub struct Transform {
    pub phi: VarCoeffOperator,
    pub exp: VarCoeffOperator,
    pub exp_inv: VarCoeffOperator,
}

impl Transform {
    pub fn new(phi: VarCoeffOperator) -> Result<Self> {
        let exp = phi.exp(EXP_TOL)?;
        let exp_inv = phi.scale(C64::new(-1.0, 0.0)).exp(EXP_TOL)?;
        Ok(Transform { phi, exp, exp_inv })
    }
}

/// Progress of the reduction of one operator.
#[derive(Clone, Debug)]
pub struct ReductionState {
    pub diag: DiagonalModel,
    pub r: VarCoeffOperator,
    /// Deferred corrections, activated one per step.
    pub q: Vec<VarCoeffOperator>,
    /// Number of completed steps.
    pub step: usize,
    pub transforms: Vec<Transform>,
    /// Current width `s'` and the norm used for remainders.
    pub norm: NormParams,
    pub omega: Vec<f64>,
}

/// Diagnostics of one reduction step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub alpha: f64,
    pub r_before: f64,
    pub r_after: f64,
    pub phi_norm: f64,
    pub homological_residual: f64,
    /// Largest `|Re mean R_kk|`; zero for Hamiltonian input.
    pub diagonal_reality_defect: f64,
    pub contracted: bool,
}

impl ReductionState {
    /// `Lf = omega.d + m d^5 + R` with `R` from the regularized operator.
    pub fn new(reg: &RegularizedOperator, norm: NormParams) -> Self {
        let tr = reg.trunc();
        ReductionState {
            diag: DiagonalModel::unperturbed(tr, reg.m),
            r: reg.remainder_matrix(),
            q: Vec::new(),
            step: 0,
            transforms: Vec::new(),
            norm,
            omega: reg.omega.clone(),
        }
    }

    pub fn from_parts(diag: DiagonalModel, r: VarCoeffOperator, omega: &[f64], norm: NormParams) -> Self {
        ReductionState { diag, r, q: Vec::new(), step: 0, transforms: Vec::new(), norm, omega: omega.to_vec() }
    }

    /// Weighted remainder size used for contraction checks.
    pub fn remainder_norm(&self) -> f64 {
        self.r.decay_norm(DecayKind::Varsigma, &plain(&self.norm))
    }

    /// `Omega^{-1} h = e^{-Phi_n} ... e^{-Phi_1} h`.
    pub fn omega_inv(&self, h: &FourierField) -> FourierField {
        self.transforms.iter().fold(h.clone(), |g, t| t.exp_inv.apply(&g))
    }

    /// `Omega h = e^{Phi_1} ... e^{Phi_n} h`.
    pub fn omega_apply(&self, h: &FourierField) -> FourierField {
        self.transforms.iter().rev().fold(h.clone(), |g, t| t.exp.apply(&g))
    }

    pub fn to_json(&self) -> String {
        let j = StateJson {
            diag: self.diag.to_json_value(),
            r: self.r.to_json_value(),
            q: self.q.iter().map(|x| x.to_json_value()).collect(),
            step: self.step,
            transforms: self.transforms.iter().map(|t| t.phi.to_json_value()).collect(),
            norm: self.norm,
            omega: self.omega.clone(),
        };
        serde_json::to_string(&j).expect("reduction state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: StateJson = serde_json::from_str(s)?;
        let r = VarCoeffOperator::from_json_value(&j.r, None)?;
        let tr = r.trunc().clone();
        let q = j.q.iter().map(|x| VarCoeffOperator::from_json_value(x, Some(&tr))).collect::<Result<Vec<_>>>()?;
        let transforms = j
            .transforms
            .iter()
            .map(|x| VarCoeffOperator::from_json_value(x, Some(&tr)).and_then(Transform::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReductionState {
            diag: DiagonalModel::from_json_value(&j.diag, &tr)?,
            r,
            q,
            step: j.step,
            transforms,
            norm: j.norm,
            omega: j.omega,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct StateJson {
    diag: DiagonalJson,
    r: OperatorJson,
    q: Vec<OperatorJson>,
    step: usize,
    transforms: Vec<OperatorJson>,
    norm: NormParams,
    omega: Vec<f64>,
}

/// Step `m = state.step + 1` of the reduction inside outer iterate `n`.
pub fn reduce_step(state: &ReductionState, sched: &Schedule, n: usize) -> Result<(ReductionState, StepReport)> {
    let m = state.step + 1;
    let alpha = sched.alpha_mn(m, n);
    let tau = sched.tau();
    let omega = &state.omega;
    let r = &state.r;
    let r_before = state.remainder_norm();
    let (diag_new, defect) = state.diag.absorb(r);

    let phi = homological_solve(&state.diag, r, omega, alpha, tau)?;
    let hres = homological_residual(&state.diag, r, &phi, omega);
    let tf = Transform::new(phi)?;
    let x = tf.exp.sub(&VarCoeffOperator::identity(r.trunc()));
    // e^{-Phi} (omega.d X + [D, X] + R e^Phi) - diag R
    let inner = x.dphi_omega(omega).add(&diagonal_commutator(&state.diag, &x)).add(&r.mul(&tf.exp));
    let mut r_new = tf.exp_inv.mul(&inner).sub(&r.diagonal_part()).with_hamiltonian(r.is_hamiltonian());
    let mut q: Vec<VarCoeffOperator> = state.q.iter().map(|k| tf.exp_inv.mul(&k.mul(&tf.exp))).collect();
    if !q.is_empty() {
        r_new = r_new.add(&q.remove(0));
    }
    let phi_norm = tf.phi.decay_norm(DecayKind::Rho, &plain(&state.norm));
    let mut norm = state.norm;
    norm.s = (norm.s - 2.0 * sched.sigma(m)).max(0.0);
    let out = ReductionState {
        diag: diag_new,
        r: r_new,
        q,
        step: m,
        transforms: state.transforms.iter().cloned().chain(std::iter::once(tf)).collect(),
        norm,
        omega: omega.clone(),
    };
    let r_after = out.remainder_norm();
    let report = StepReport {
        step: m,
        alpha,
        r_before,
        r_after,
        phi_norm,
        homological_residual: hres,
        diagonal_reality_defect: defect,
        contracted: r_after < r_before || r_before == 0.0,
    };
    Ok((out, report))
}

/// Solves `(omega.d + D) v = g` per space mode with the first non-resonance
/// floor `alpha |k|^5 / [l]^tau`.
pub fn invert_j(dm: &DiagonalModel, g: &FourierField, omega: &[f64], alpha: f64, tau: f64) -> Result<FourierField> {
    let tr = dm.trunc().clone();
    if g.x_average().max_coeff() > 1e-14 * (1.0 + g.max_coeff()) {
        return Err(Error::Domain("right-hand side must have zero space average".into()));
    }
    let mut v = FourierField::zeros(&tr, g.is_real());
    for k in dm.modes() {
        let rhs: Vec<C64> = g.x_mode(k).iter().map(|z| -I * z).collect();
        let floor = alpha * (k as f64).abs().powi(5);
        let sol = kuksin_solve(&tr, dm.d(k), &dm.mu(k), &rhs, omega, floor, tau).map_err(|e| match e {
            Error::SmallDivisor { ell, divisor, floor } => {
                Error::Excluded(Box::new(ResonanceRecord::first(ell, k, divisor, floor)))
            }
            other => other,
        })?;
        v.set_x_mode(k, &sol.u);
    }
    Ok(v)
}

/// `v = A B Omega J^{-1} Omega^{-1} xi^{-1} B^{-1} A^{-1} f`, the right
/// inverse of `L(u)` up to the discarded remainder.
pub fn approx_inverse(
    reg: &RegularizedOperator,
    state: &ReductionState,
    f: &FourierField,
    alpha: f64,
    tau: f64,
) -> Result<FourierField> {
    let g = state.omega_inv(&reg.u1_inv(f));
    let w = invert_j(&state.diag, &g.without_x_average(), &state.omega, alpha, tau)?;
    let mut v = reg.u2(&state.omega_apply(&w));
    if f.is_real() {
        v.symmetrize();
        v = v.with_real_flag(true);
    }
    Ok(v.without_x_average())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn omega() -> Vec<f64> {
        vec![1.1, 1.1 * 0.5 * (1.0 + 5f64.sqrt())]
    }

    fn random_series<R: Rng>(tr: &Truncation, rng: &mut R, amp: f64) -> Vec<C64> {
        (0..tr.nt())
            .map(|t| {
                let w = amp * (-(tr.l1(t) as f64)).exp();
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w
            })
            .collect()
    }

    #[test]
    fn kuksin_diagonal_case() {
        let tr = Truncation::new(2, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let p = random_series(&tr, &mut rng, 1.0);
        let sol = kuksin_solve(&tr, 7.3, &vec![ZERO; tr.nt()], &p, &omega(), 1e-3, 4.0).unwrap();
        for t in 0..tr.nt() {
            assert!((sol.u[t] - p[t] / (tr.omega_dot(t, &omega()) + 7.3)).norm() < 1e-15);
        }
        let zero = kuksin_solve(&tr, 7.3, &p, &vec![ZERO; tr.nt()], &omega(), 1e-3, 4.0).unwrap();
        assert!(zero.u.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn kuksin_with_coefficient_has_small_residual() {
        let tr = Truncation::new(2, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for d in [0.7, 3.37, 25.0] {
            let mut mu = random_series(&tr, &mut rng, 0.1 * d);
            mu[tr.zero_index()] = ZERO;
            let p = random_series(&tr, &mut rng, 1.0);
            let sol = kuksin_solve(&tr, d, &mu, &p, &omega(), 1e-6, 4.0).unwrap();
            assert!(sol.residual < 1e-12, "{:?} {}", sol.method, sol.residual);
        }
    }

    #[test]
    fn kuksin_reports_small_divisor() {
        let tr = Truncation::new(2, 2, 2);
        let w = omega();
        // omega.(1, 0) + d = 0
        let err = kuksin_solve(&tr, -w[0], &vec![ZERO; tr.nt()], &vec![C64::new(1.0, 0.0); tr.nt()], &w, 1e-3, 4.0);
        match err {
            Err(Error::SmallDivisor { ell, .. }) => assert_eq!(ell, vec![1, 0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diagonal_remainder_gives_zero_transform() {
        let tr = Truncation::new(2, 3, 4);
        let dm = DiagonalModel::unperturbed(&tr, 1.0);
        let r = VarCoeffOperator::diagonal_c(&tr, |k| I * k as f64 * 1e-3);
        let phi = homological_solve(&dm, &r, &omega(), 1e-3, 4.0).unwrap();
        assert_eq!(phi.max_coeff(), 0.0);
    }

    #[test]
    fn single_block_is_explicit_division() {
        let tr = Truncation::new(2, 3, 4);
        let dm = DiagonalModel::unperturbed(&tr, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut r = VarCoeffOperator::zeros(&tr);
        let s = random_series(&tr, &mut rng, 1e-3);
        r.block_mut(1, 2).copy_from_slice(&s);
        let phi = homological_solve(&dm, &r, &omega(), 1e-3, 4.0).unwrap();
        for t in 0..tr.nt() {
            let want = I * s[t] / (tr.omega_dot(t, &omega()) + 1.0 - 32.0);
            assert!((phi.block(1, 2)[t] - want).norm() < 1e-17);
        }
        assert!(phi.block(2, 1).iter().all(|z| *z == ZERO));
    }

    #[test]
    fn homological_equation_residual() {
        let tr = Truncation::new(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let mut mu = FourierField::zeros(&tr, false);
        for k in 1..=4 {
            let mut s = random_series(&tr, &mut rng, 1e-3 * (k * k * k) as f64);
            s[tr.zero_index()] = ZERO;
            mu.set_x_mode(k, &s);
            mu.set_x_mode(-k, &s);
        }
        let d0 = DiagonalModel::unperturbed(&tr, 1.01);
        let dm = DiagonalModel::new(&tr, 1.01, d0.eigenvalues().iter().map(|x| x.1).collect(), mu, 0.5).unwrap();
        let r = VarCoeffOperator::random(&tr, &mut rng, 1e-3, 1.0);
        let phi = homological_solve(&dm, &r, &omega(), 1e-4, 4.0).unwrap();
        let res = homological_residual(&dm, &r, &phi, &omega());
        assert!(res < 1e-9, "residual {res:e}");
    }

    #[test]
    fn reduction_of_zero_remainder_is_trivial() {
        let tr = Truncation::new(2, 3, 4);
        let st = ReductionState::from_parts(
            DiagonalModel::unperturbed(&tr, 1.0),
            VarCoeffOperator::zeros(&tr),
            &omega(),
            NormParams { s: 0.1, p: 0.0, s0: 2 },
        );
        let sched = Schedule::new(1e-4, 0.1, 5e-3, 1.2, 2, 2).unwrap();
        let (next, rep) = reduce_step(&st, &sched, 1).unwrap();
        assert_eq!(next.r.max_coeff(), 0.0);
        assert_eq!(rep.phi_norm, 0.0);
        assert_eq!(next.diag.eigenvalues(), st.diag.eigenvalues());
    }

    #[test]
    fn invert_j_diagonal_and_residual() {
        let tr = Truncation::new(2, 3, 4);
        let dm = DiagonalModel::unperturbed(&tr, 1.0);
        let g = FourierField::mode(&tr, &[1, -1], 2, C64::new(1.0, 0.0));
        let v = invert_j(&dm, &g, &omega(), 1e-3, 4.0).unwrap();
        let want = g.scale_c(C64::new(1.0, 0.0) / (I * (omega()[0] - omega()[1] + 32.0)));
        assert!((&v - &want).max_coeff() < 1e-16);
        let zero = invert_j(&dm, &FourierField::zeros(&tr, true), &omega(), 1e-3, 4.0).unwrap();
        assert_eq!(zero.max_coeff(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut mu = FourierField::zeros(&tr, false);
        for k in [-2, 1, 3] {
            let mut s = random_series(&tr, &mut rng, 1e-2);
            s[tr.zero_index()] = ZERO;
            mu.set_x_mode(k, &s);
        }
        let dm = DiagonalModel::new(&tr, 1.0, dm.eigenvalues().iter().map(|x| x.1).collect(), mu, 0.5).unwrap();
        let g = FourierField::random(&tr, &mut rng, 1.0, 1.0, false, true);
        let v = invert_j(&dm, &g, &omega(), 1e-3, 4.0).unwrap();
        let jv = &v.dphi_omega(&omega()) + &dm.as_operator().apply(&v);
        assert!((&jv - &g).max_coeff() < 1e-10 * g.max_coeff());
    }

    #[test]
    fn absorbed_diagonal_stays_real() {
        let tr = Truncation::new(2, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let c1 = FourierField::random(&tr, &mut rng, 1e-3, 1.0, true, false);
        let mut r = VarCoeffOperator::zeros(&tr);
        for k in 1..=4i32 {
            for kk in [-k, k] {
                let b: Vec<C64> = c1.x_mode(0).iter().map(|z| -I * (kk.pow(3)) as f64 * z).collect();
                r.block_mut(kk, kk).copy_from_slice(&b);
            }
        }
        let dm = DiagonalModel::unperturbed(&tr, 1.0);
        let (next, defect) = dm.absorb(&r);
        assert!(defect < 1e-18);
        let want = -(27.0) * c1.x_mode(0)[tr.zero_index()].re;
        assert!((next.d(3) - 243.0 - want).abs() < 1e-12, "{} {}", next.d(3) - 243.0, want);
    }

    #[test]
    fn state_json_roundtrip() {
        let tr = Truncation::new(2, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let r = VarCoeffOperator::random(&tr, &mut rng, 1e-3, 1.0);
        let st = ReductionState::from_parts(
            DiagonalModel::unperturbed(&tr, 1.0),
            r,
            &omega(),
            NormParams { s: 0.1, p: 0.0, s0: 2 },
        );
        let sched = Schedule::new(1e-4, 0.1, 5e-3, 1.2, 2, 2).unwrap();
        let (next, _) = reduce_step(&st, &sched, 2).unwrap();
        let back = ReductionState::from_json(&next.to_json()).unwrap();
        assert_eq!(back.r.raw(), next.r.raw());
        assert_eq!(back.diag.eigenvalues(), next.diag.eigenvalues());
        assert_eq!(back.step, 1);
        assert_eq!(back.transforms[0].exp.raw(), next.transforms[0].exp.raw());
    }
}
