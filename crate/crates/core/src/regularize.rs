//! Reduction of `L(u)` to constant leading coefficient.
//!
//! A space change `A` makes the `d_y^5` coefficient depend on `phi` only,
//! then a time reparametrization `B` makes it constant:
//! `L A B = A B xi Lf` with
//! `Lf = omega.d_theta + m d_y^5 + d_y { d_y [c1 d_y] + c0 }`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::composition::{apply_a, apply_b, compose, Direction, SpaceDiffeo, TimeShift, WIDTH_SHRINK};
use crate::decay::{space_mode, VarCoeffOperator};
use crate::error::{Error, Result};
use crate::grid::next_smooth;
use crate::linearized::{coeffs_a, LinearizedOperator};
use crate::spectral::{DivisorFloor, FieldJson, FourierField, NormParams, Truncation, I};

/// Tolerance on `sup |b2 - (1 + b)|`.
pub const FLATNESS_TOL: f64 = 1e-9;
/// Width factors of the two coefficient estimates.
pub const K1: f64 = 99.0 / 101.0;
pub const K2: f64 = 10000.0 / 10201.0;

fn wide_grid(k: usize) -> usize {
    if k == 0 {
        1
    } else {
        next_smooth(4 * k + 1)
    }
}

/// Evaluates `fields` on a padded grid, applies `f` pointwise and transforms back.
fn pointwise(tr: &Arc<Truncation>, fields: &[&FourierField], real: bool, f: impl Fn(&[C64]) -> C64) -> FourierField {
    let (np, nx) = (wide_grid(tr.kphi), wide_grid(tr.kx));
    let vals: Vec<Vec<C64>> = fields.iter().map(|g| g.grid_values(np, nx)).collect();
    let mut buf = vec![C64::new(0.0, 0.0); fields.len()];
    let out: Vec<C64> = (0..vals.first().map_or(np.pow(tr.v as u32) * nx, |v| v.len()))
        .map(|i| {
            for (b, v) in buf.iter_mut().zip(&vals) {
                *b = v[i];
            }
            f(&buf)
        })
        .collect();
    FourierField::from_grid(tr, out, np, nx, real)
}

fn grid_min_re(f: &FourierField) -> f64 {
    let tr = f.trunc();
    f.grid_values(wide_grid(tr.kphi), wide_grid(tr.kx)).iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
}

/// Output of the space step.
#[derive(Clone, Debug)]
pub struct SpaceStep {
    /// `1 + b(phi)` is the flattened leading coefficient.
    pub b: FourierField,
    pub diffeo: SpaceDiffeo,
    pub b2: FourierField,
    pub b1: FourierField,
    pub b0: FourierField,
}

/// Finds `beta` with `(1 + a)(1 + beta_x)^5 = 1 + b(phi)`, `a = -6 u_xx`, and
/// the coefficients of `A^{-1} L A`.
pub fn space_step(u: &FourierField, omega: &[f64]) -> Result<SpaceStep> {
    let tr = u.trunc().clone();
    let a = u.dx(2).scale(-6.0);
    let (np, nx) = (wide_grid(tr.kphi), wide_grid(tr.kx));
    let av = a.grid_values(np, nx);
    if let Some(z) = av.iter().find(|z| 1.0 + z.re <= 0.0) {
        return Err(Error::Domain(format!("1 + a = {:.3e} is not positive", 1.0 + z.re)));
    }
    // r = (1 + a)^{-1/5}, M(phi) = avg_x r, 1 + b = M^{-5}, p0 = r / M - 1
    let r: Vec<f64> = av.iter().map(|z| (-(1.0 + z.re).ln() / 5.0).exp()).collect();
    let ntg = r.len() / nx;
    let mut bvals = vec![C64::new(0.0, 0.0); r.len()];
    let mut pvals = vec![C64::new(0.0, 0.0); r.len()];
    for p in 0..ntg {
        let row = &r[p * nx..(p + 1) * nx];
        let mean = row.iter().sum::<f64>() / nx as f64;
        for (m, &rv) in row.iter().enumerate() {
            bvals[p * nx + m] = C64::new(mean.powi(-5) - 1.0, 0.0);
            pvals[p * nx + m] = C64::new(rv / mean - 1.0, 0.0);
        }
    }
    let mut b = FourierField::from_grid(&tr, bvals, np, nx, true);
    // b is x-independent up to roundoff; keep only its x-average
    b = b.x_average();
    let p0 = FourierField::from_grid(&tr, pvals, np, nx, true).without_x_average();
    let beta = p0.dx_inv()?;
    let diffeo = SpaceDiffeo::new(beta.clone())?;

    let coeffs = coeffs_a(u);
    let d: Vec<FourierField> = (1..=5).map(|j| beta.dx(j)).collect();
    let (a2, a1, a0) = (&coeffs.a2, &coeffs.a1, &coeffs.a0);
    let (a2x, a2xx, a1x) = (a2.dx(1), a2.dx(2), a1.dx(1));
    let wb = beta.dphi_omega(omega);
    let b2s = pointwise(&tr, &[a2, &d[0]], true, |v| v[0] * (1.0 + v[1]).powi(5));
    let b1s = pointwise(&tr, &[a1, a2, &a2x, &d[0], &d[1], &d[2]], true, |v| {
        let q = 1.0 + v[3];
        v[0] * q.powi(3) + 3.0 * q * q * v[4] * v[2] + 5.0 * v[1] * q * q * v[5]
    });
    let b0s = pointwise(&tr, &[a0, a1, &a1x, a2, &a2x, &a2xx, &d[0], &d[1], &d[2], &d[3], &d[4], &wb], true, |v| {
        let (a0, a1, a1x, a2, a2x, a2xx) = (v[0], v[1], v[2], v[3], v[4], v[5]);
        let (b1, b2, b3, b4, b5, wb) = (v[6], v[7], v[8], v[9], v[10], v[11]);
        a1x * b2 + a1 * b3 + a2xx * b3 + 2.0 * a2x * b4 + a2 * b5 + wb + a0 * (1.0 + b1)
    });
    let b2 = compose(&b2s, &diffeo, Direction::Inverse);
    let b1 = compose(&b1s, &diffeo, Direction::Inverse);
    let b0 = compose(&b0s, &diffeo, Direction::Inverse);

    let one_b = &FourierField::constant(&tr, 1.0) + &b;
    let flat = (&b2 - &one_b).norm_max(0.0, 0);
    if flat > FLATNESS_TOL {
        return Err(Error::Numerical(format!("leading coefficient not flat: sup |b2 - (1 + b)| = {flat:.3e}")));
    }
    Ok(SpaceStep { b, diffeo, b2, b1, b0 })
}

/// Output of the time step.
#[derive(Clone, Debug)]
pub struct TimeStep {
    pub m: f64,
    pub shift: TimeShift,
    pub xi: FourierField,
    pub c1: FourierField,
    pub c0: FourierField,
}

/// `1 + b = m (1 + omega.d alpha)`, `xi = B^{-1}(1 + omega.d alpha)`, `c_i = B^{-1} b_i / xi`.
pub fn time_step(
    b: &FourierField,
    b1: &FourierField,
    b0: &FourierField,
    omega: &[f64],
    floor: &DivisorFloor,
) -> Result<TimeStep> {
    let tr = b.trunc().clone();
    let one = FourierField::constant(&tr, 1.0);
    let one_b = &one + b;
    let m = one_b.mean().re;
    let mut rhs = one_b.clone();
    rhs.set_at(tr.zero_index(), 0, C64::new(0.0, 0.0));
    let alpha = rhs.omega_dphi_inv(omega, floor)?.scale(1.0 / m);
    let shift = TimeShift::new(alpha.clone(), omega)?;
    let xi = apply_b(&shift, &(&one + &alpha.dphi_omega(omega)), Direction::Inverse).x_average();
    if grid_min_re(&xi) <= 0.0 {
        return Err(Error::Domain("time reparametrization factor xi is not positive".into()));
    }
    let bb1 = apply_b(&shift, b1, Direction::Inverse);
    let bb0 = apply_b(&shift, b0, Direction::Inverse);
    let c1 = pointwise(&tr, &[&bb1, &xi], true, |v| v[0] / v[1]);
    let c0 = pointwise(&tr, &[&bb0, &xi], true, |v| v[0] / v[1]);
    Ok(TimeStep { m, shift, xi, c1, c0 })
}

/// `L(u)` conjugated to `xi Lf`, together with the maps that do it.
#[derive(Clone, Debug)]
pub struct RegularizedOperator {
    pub m: f64,
    pub c1: FourierField,
    pub c0: FourierField,
    pub diffeo: SpaceDiffeo,
    pub shift: TimeShift,
    pub xi: FourierField,
    pub b: FourierField,
    pub omega: Vec<f64>,
    /// Relative analyticity width of `c_i` with respect to that of `u`.
    pub width_factor: f64,
}

pub fn assemble(u: &FourierField, omega: &[f64], floor: &DivisorFloor) -> Result<RegularizedOperator> {
    let sp = space_step(u, omega)?;
    let ts = time_step(&sp.b, &sp.b1, &sp.b0, omega, floor)?;
    Ok(RegularizedOperator {
        m: ts.m,
        c1: ts.c1,
        c0: ts.c0,
        diffeo: sp.diffeo,
        shift: ts.shift,
        xi: ts.xi,
        b: sp.b,
        omega: omega.to_vec(),
        width_factor: K1 * K2 * WIDTH_SHRINK,
    })
}

impl RegularizedOperator {
    pub fn trunc(&self) -> &Arc<Truncation> {
        self.c1.trunc()
    }

    /// `U2 h = A B h`.
    pub fn u2(&self, h: &FourierField) -> FourierField {
        apply_a(&self.diffeo, &apply_b(&self.shift, h, Direction::Forward), Direction::Forward)
    }

    /// `U2^{-1} h = B^{-1} A^{-1} h`.
    pub fn u2_inv(&self, h: &FourierField) -> FourierField {
        apply_b(&self.shift, &apply_a(&self.diffeo, h, Direction::Inverse), Direction::Inverse)
    }

    /// `U1 h = A B (xi h)`.
    pub fn u1(&self, h: &FourierField) -> FourierField {
        self.u2(&self.xi.mul(h))
    }

    /// `U1^{-1} h = xi^{-1} B^{-1} A^{-1} h`.
    pub fn u1_inv(&self, h: &FourierField) -> FourierField {
        let g = self.u2_inv(h);
        pointwise(self.trunc(), &[&g, &self.xi], g.is_real(), |v| v[0] / v[1])
    }

    /// `d_y { d_y [c1 d_y h] + c0 h }`.
    pub fn apply_remainder(&self, h: &FourierField) -> FourierField {
        (&self.c1.mul(&h.dx(1)).dx(1) + &self.c0.mul(h)).dx(1)
    }

    /// `Lf h`.
    pub fn apply(&self, h: &FourierField) -> FourierField {
        let mut out = &h.dphi_omega(&self.omega) + &h.dx(5).scale(self.m);
        out = &out + &self.apply_remainder(h);
        out
    }

    /// Matrix of `d_y { d_y [c1 d_y] + c0 }` on zero-average fields.
    pub fn remainder_matrix(&self) -> VarCoeffOperator {
        let tr = self.trunc().clone();
        let kx = tr.kx as i32;
        let mut r = VarCoeffOperator::zeros(&tr).with_hamiltonian(true);
        let n = r.size();
        for a in 0..n {
            let i = space_mode(tr.kx, a);
            for c in 0..n {
                let j = space_mode(tr.kx, c);
                let d = i - j;
                if d.abs() > kx {
                    continue;
                }
                let w1 = -I * (i * i * j) as f64;
                let w0 = I * i as f64;
                let (s1, s0) = (self.c1.x_mode(d), self.c0.x_mode(d));
                for (t, z) in r.block_mut(i, j).iter_mut().enumerate() {
                    *z = w1 * s1[t] + w0 * s0[t];
                }
            }
        }
        r
    }

    pub fn to_json_value(&self) -> RegularizedJson {
        RegularizedJson {
            m: self.m,
            omega: self.omega.clone(),
            c0: self.c0.to_json_value(),
            c1: self.c1.to_json_value(),
            xi: self.xi.to_json_value(),
            alpha: self.shift.alpha().to_json_value(),
            beta: self.diffeo.beta().to_json_value(),
            b: self.b.to_json_value(),
            width_factor: self.width_factor,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("regularized operator serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: RegularizedJson = serde_json::from_str(s)?;
        let beta = FourierField::from_json_value(&j.beta, None)?;
        let tr = beta.trunc().clone();
        let f = |x: &FieldJson| FourierField::from_json_value(x, Some(&tr));
        Ok(RegularizedOperator {
            m: j.m,
            c1: f(&j.c1)?,
            c0: f(&j.c0)?,
            diffeo: SpaceDiffeo::new(beta)?,
            shift: TimeShift::new(f(&j.alpha)?, &j.omega)?,
            xi: f(&j.xi)?,
            b: f(&j.b)?,
            omega: j.omega,
            width_factor: j.width_factor,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularizedJson {
    pub m: f64,
    pub omega: Vec<f64>,
    pub c0: FieldJson,
    pub c1: FieldJson,
    pub xi: FieldJson,
    pub alpha: FieldJson,
    pub beta: FieldJson,
    pub b: FieldJson,
    pub width_factor: f64,
}

/// Single modes `e^{i(l.phi + k y)}` with `|l|_1 <= l_max` and `|k|` in `ks`.
pub fn mode_basis(trunc: &Arc<Truncation>, l_max: u32, ks: &[i32]) -> Vec<FourierField> {
    let mut out = Vec::new();
    for t in 0..trunc.nt() {
        if trunc.l1(t) > l_max {
            continue;
        }
        for &ka in ks {
            for k in [-ka, ka] {
                let mut h = FourierField::zeros(trunc, false);
                h.set_at(t, k, C64::new(1.0, 0.0));
                out.push(h);
            }
        }
    }
    out
}

/// `max_h ||A B (xi Lf h) - L A B h|| / (||omega.d h|| + ||d^5 h||)` over
/// `basis`, in plain l2. The denominator avoids dividing by a near-resonant
/// `L h`.
pub fn conjugation_oracle(u: &FourierField, reg: &RegularizedOperator, basis: &[FourierField]) -> f64 {
    let l = LinearizedOperator::new(u, &reg.omega);
    let l2 = NormParams { s: 0.0, p: 0.0, s0: 0 };
    let mut worst: f64 = 0.0;
    for h in basis {
        let lhs = reg.u1(&reg.apply(h));
        let rhs = l.apply(&reg.u2(h));
        let den = h.dphi_omega(&reg.omega).norm_sp(&l2) + h.dx(5).norm_sp(&l2);
        worst = worst.max((&lhs - &rhs).norm_sp(&l2) / den.max(f64::MIN_POSITIVE));
    }
    worst
}
