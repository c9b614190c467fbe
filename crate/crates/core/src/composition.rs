//! Changes of variables: `x -> x + beta(phi, x)` with its inverse, the
//! composition operators built from it, and the time reparametrization
//! `phi -> phi + omega alpha(phi)`.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spectral::{FourierField, Truncation, ZERO};

/// Width factor carried by a composed field (analyticity is lost at the strip edge).
pub const WIDTH_SHRINK: f64 = 100.0 / 101.0;
/// Smallness bound on displacements.
pub const MAX_DISPLACEMENT: f64 = 0.01;
/// Fixed-point tolerance for inverse displacements.
pub const INVERSE_TOL: f64 = 1e-13;
pub const INVERSE_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Space-mode coefficients of a field at each torus grid point, for cheap
/// evaluation at arbitrary x.
struct XSlices {
    kx: i32,
    nxm: usize,
    data: Vec<C64>,
}

impl XSlices {
    fn new(f: &FourierField, nphi: usize) -> Self {
        let tr = f.trunc();
        let ntg = nphi.pow(tr.v as u32);
        let nxm = tr.nxm();
        let mut data = vec![ZERO; ntg * nxm];
        for k in -(tr.kx as i32)..=tr.kx as i32 {
            let g = tr.torus_to_grid(&f.x_mode(k), nphi);
            let j = (k + tr.kx as i32) as usize;
            for (p, z) in g.into_iter().enumerate() {
                data[p * nxm + j] = z;
            }
        }
        XSlices { kx: tr.kx as i32, nxm, data }
    }

    fn eval(&self, p: usize, x: f64) -> C64 {
        let row = &self.data[p * self.nxm..(p + 1) * self.nxm];
        let e = C64::from_polar(1.0, x);
        let mut z = C64::from_polar(1.0, -(self.kx as f64) * x);
        let mut acc = ZERO;
        for c in row {
            acc += c * z;
            z *= e;
        }
        acc
    }

    /// `u(x + d) - u(x)`, with `e^{ikd} - 1` formed without cancellation.
    fn eval_increment(&self, p: usize, x: f64, d: f64) -> C64 {
        let row = &self.data[p * self.nxm..(p + 1) * self.nxm];
        let kx = self.kx as usize;
        let q = C64::from_polar(1.0, d);
        let qm1 = expm1_i(d);
        let e = C64::from_polar(1.0, x);
        let mut zp = e;
        let mut zm = e.conj();
        let mut sk = qm1;
        let mut acc = ZERO;
        for k in 1..=kx {
            acc += row[kx + k] * zp * sk + row[kx - k] * zm * sk.conj();
            zp *= e;
            zm *= e.conj();
            sk = sk * q + qm1;
        }
        acc
    }
}

/// `e^{ix} - 1`.
fn expm1_i(x: f64) -> C64 {
    let h = (0.5 * x).sin();
    C64::new(-2.0 * h * h, x.sin())
}

fn x_point(m: usize, nx: usize) -> f64 {
    2.0 * std::f64::consts::PI * m as f64 / nx as f64
}

fn grid_max(f: &FourierField) -> f64 {
    f.dealias_values().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A phi-dependent diffeomorphism `x -> x + beta(phi, x)` of the circle.
#[derive(Clone, Debug)]
pub struct SpaceDiffeo {
    beta: FourierField,
    beta_hat: FourierField,
    iterations: usize,
}

impl SpaceDiffeo {
    /// Validates smallness and monotonicity, then computes the inverse displacement.
    pub fn new(beta: FourierField) -> Result<Self> {
        if !beta.is_real() {
            return Err(Error::Domain("displacement must be a real field".into()));
        }
        let amp = grid_max(&beta);
        if amp > MAX_DISPLACEMENT {
            return Err(Error::Domain(format!("displacement sup {amp:.3e} exceeds {MAX_DISPLACEMENT}")));
        }
        let slope = grid_max(&beta.dx(1));
        if slope >= 1.0 {
            return Err(Error::Domain(format!("x + beta is not monotone (sup |beta_x| = {slope:.3e})")));
        }
        let (beta_hat, iterations) = invert_displacement(&beta)?;
        Ok(SpaceDiffeo { beta, beta_hat, iterations })
    }

    /// The identity change of variables on a truncation.
    pub fn identity(trunc: &Arc<Truncation>) -> Self {
        let z = FourierField::zeros(trunc, true);
        SpaceDiffeo { beta: z.clone(), beta_hat: z, iterations: 0 }
    }

    pub fn beta(&self) -> &FourierField {
        &self.beta
    }

    pub fn beta_hat(&self) -> &FourierField {
        &self.beta_hat
    }

    pub fn inverse_iterations(&self) -> usize {
        self.iterations
    }

    fn displacement(&self, dir: Direction) -> &FourierField {
        match dir {
            Direction::Forward => &self.beta,
            Direction::Inverse => &self.beta_hat,
        }
    }
}

/// Solves `bh(phi, y) = -beta(phi, y + bh(phi, y))` pointwise on the
/// dealiasing grid, returning the modes of `bh` and the iteration count.
pub fn invert_displacement(beta: &FourierField) -> Result<(FourierField, usize)> {
    let tr = beta.trunc().clone();
    let (np, nx) = (tr.dealias_phi(), tr.dealias_x());
    let slices = XSlices::new(beta, np);
    let ntg = np.pow(tr.v as u32);
    let mut vals = vec![ZERO; ntg * nx];
    let mut worst = 0;
    for p in 0..ntg {
        for m in 0..nx {
            let y = x_point(m, nx);
            let mut b = 0.0f64;
            let mut done = false;
            for it in 1..=INVERSE_MAX_ITER {
                let nb = -slices.eval(p, y + b).re;
                let change = (nb - b).abs();
                b = nb;
                if change < INVERSE_TOL {
                    worst = worst.max(it);
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::Numerical(format!(
                    "inverse displacement did not converge in {INVERSE_MAX_ITER} iterations"
                )));
            }
            vals[p * nx + m] = C64::new(b, 0.0);
        }
    }
    Ok((FourierField::from_grid(&tr, vals, np, nx, true), worst))
}

/// `u(x + d)`, or `(1 + d_x) u(x + d)` with `jacobian`. The grid only
/// carries the increment over `u`, so roundoff scales with `d`.
fn compose_grid(u: &FourierField, disp: &FourierField, jacobian: bool) -> FourierField {
    let tr = u.trunc().clone();
    assert!(*tr == **disp.trunc(), "composition needs matching truncations");
    if disp.max_coeff() == 0.0 {
        return u.clone();
    }
    let (np, nx) = (tr.dealias_phi(), tr.dealias_x());
    let slices = XSlices::new(u, np);
    let d = disp.grid_values(np, nx);
    let jac = jacobian.then(|| (disp.dx(1).grid_values(np, nx), u.grid_values(np, nx)));
    let ntg = np.pow(tr.v as u32);
    let mut vals = vec![ZERO; ntg * nx];
    for p in 0..ntg {
        for m in 0..nx {
            let i = p * nx + m;
            let mut z = slices.eval_increment(p, x_point(m, nx), d[i].re);
            if let Some((dx, uv)) = &jac {
                z = z * (1.0 + dx[i].re) + dx[i] * uv[i];
            }
            vals[i] = z;
        }
    }
    u + &FourierField::from_grid(&tr, vals, np, nx, u.is_real())
}

/// `u(phi, x + beta(phi, x))`, or `u(phi, y + bh(phi, y))` for the inverse.
pub fn compose(u: &FourierField, d: &SpaceDiffeo, dir: Direction) -> FourierField {
    compose_grid(u, d.displacement(dir), false)
}

/// Symplectic change of variables `(1 + beta_x) h(phi, x + beta)`; the
/// inverse uses `bh`.
pub fn apply_a(d: &SpaceDiffeo, h: &FourierField, dir: Direction) -> FourierField {
    compose_grid(h, d.displacement(dir), true)
}

/// `Omega(u, v)(phi) = avg_x (d_x^{-1} u) v`, a real function of phi.
pub fn symplectic_form(u: &FourierField, v: &FourierField) -> Result<FourierField> {
    let iu = u.dx_inv()?;
    Ok(iu.mul(v).x_average())
}

/// Quasi-periodic reparametrization of time `phi -> phi + omega alpha(phi)`.
#[derive(Clone, Debug)]
pub struct TimeShift {
    alpha: FourierField,
    alpha_hat: FourierField,
    omega: Vec<f64>,
}

impl TimeShift {
    pub fn new(alpha: FourierField, omega: &[f64]) -> Result<Self> {
        let tr = alpha.trunc().clone();
        if !alpha.is_x_independent(1e-14 * (1.0 + alpha.max_coeff())) {
            return Err(Error::Domain("time shift must depend on phi only".into()));
        }
        if alpha.mean().norm() > 1e-14 * (1.0 + alpha.max_coeff()) {
            return Err(Error::Domain("time shift needs zero torus average".into()));
        }
        let amp = grid_max(&alpha);
        if amp > MAX_DISPLACEMENT {
            return Err(Error::Domain(format!("time shift sup {amp:.3e} exceeds {MAX_DISPLACEMENT}")));
        }
        let slope = grid_max(&alpha.dphi_omega(omega));
        if slope >= 1.0 {
            return Err(Error::Domain(format!("time shift not invertible (sup |omega.d alpha| = {slope:.3e})")));
        }
        let np = tr.dealias_phi();
        let ntg = np.pow(tr.v as u32);
        let series = alpha.x_mode(0);
        let mut vals = vec![ZERO; ntg];
        for (p, val) in vals.iter_mut().enumerate() {
            let th = tr.torus_point(p, np);
            let mut a = 0.0f64;
            let mut done = false;
            for _ in 0..INVERSE_MAX_ITER {
                let pt: Vec<f64> = th.iter().zip(omega).map(|(t, w)| t + w * a).collect();
                let na = -eval_torus(&tr, &series, &pt).re;
                let change = (na - a).abs();
                a = na;
                if change < INVERSE_TOL {
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(Error::Numerical("inverse time shift did not converge".into()));
            }
            *val = C64::new(a, 0.0);
        }
        let hat = tr.torus_from_grid(vals, np);
        let mut alpha_hat = FourierField::from_torus(&tr, &hat, false);
        alpha_hat.symmetrize();
        Ok(TimeShift { alpha, alpha_hat, omega: omega.to_vec() })
    }

    pub fn identity(trunc: &Arc<Truncation>, omega: &[f64]) -> Self {
        let z = FourierField::zeros(trunc, true);
        TimeShift { alpha: z.clone(), alpha_hat: z, omega: omega.to_vec() }
    }

    pub fn alpha(&self) -> &FourierField {
        &self.alpha
    }

    pub fn alpha_hat(&self) -> &FourierField {
        &self.alpha_hat
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }
}

/// Torus series evaluated at one point.
pub(crate) fn eval_torus(tr: &Truncation, series: &[C64], pt: &[f64]) -> C64 {
    let mut acc = ZERO;
    for (t, c) in series.iter().enumerate() {
        if *c != ZERO {
            let a: f64 = tr.ell(t).iter().zip(pt).map(|(&l, &x)| l as f64 * x).sum();
            acc += c * C64::from_polar(1.0, a);
        }
    }
    acc
}

/// `e^{i l.pt}` for every retained torus mode.
fn torus_phases(tr: &Truncation, pt: &[f64]) -> Vec<C64> {
    let k = tr.kphi as i32;
    let pows: Vec<Vec<C64>> = pt
        .iter()
        .map(|&x| (-k..=k).map(|j| C64::from_polar(1.0, j as f64 * x)).collect())
        .collect();
    (0..tr.nt())
        .map(|t| {
            tr.ell(t)
                .iter()
                .enumerate()
                .fold(C64::new(1.0, 0.0), |acc, (j, &l)| acc * pows[j][(l + k) as usize])
        })
        .collect()
}

/// `h(phi + omega alpha(phi), y)`, or with `ah` for the inverse.
pub fn apply_b(t: &TimeShift, h: &FourierField, dir: Direction) -> FourierField {
    let tr = h.trunc().clone();
    let a = match dir {
        Direction::Forward => &t.alpha,
        Direction::Inverse => &t.alpha_hat,
    };
    if a.max_coeff() == 0.0 {
        return h.clone();
    }
    let np = tr.dealias_phi();
    let ntg = np.pow(tr.v as u32);
    let av = tr.torus_to_grid(&a.x_mode(0), np);
    let nxm = tr.nxm();
    let mut slices = vec![vec![ZERO; ntg]; nxm];
    for p in 0..ntg {
        let th = tr.torus_point(p, np);
        let base = torus_phases(&tr, &th);
        let inc: Vec<C64> = (0..tr.nt())
            .zip(&base)
            .map(|(tt, b)| b * expm1_i(av[p].re * tr.omega_dot(tt, &t.omega)))
            .collect();
        for (j, slot) in slices.iter_mut().enumerate() {
            let k = j as i32 - tr.kx as i32;
            let mut z = ZERO;
            for (tt, e) in inc.iter().enumerate() {
                z += h.at(tt, k) * e;
            }
            slot[p] = z;
        }
    }
    let mut out = h.clone();
    for (j, g) in slices.into_iter().enumerate() {
        let k = j as i32 - tr.kx as i32;
        let mut m = h.x_mode(k);
        for (a, b) in m.iter_mut().zip(tr.torus_from_grid(g, np)) {
            *a += b;
        }
        out.set_x_mode(k, &m);
    }
    if h.is_real() {
        out.symmetrize();
    }
    out
}
