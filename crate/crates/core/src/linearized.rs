//! The nonlinear residual `F(u)` and its linearization `L(u)`.
//!
//! `F(u) = omega.d_phi u + u_5 + 10 u u_3 + 20 u_1 u_2 + 30 u^2 u_1 - 6 u_2 u_5 - 18 u_3 u_4 - d_x f`
//! and `L(u) h = omega.d_phi h + d_x { d_x^2 [a2 d_x^2 h] + d_x [a1 d_x h] + a0 h }`
//! with `a2 = 1 - 6 u_xx`, `a1 = 10 u`, `a0 = 10 u_xx + 30 u^2`.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::decay::{space_mode, VarCoeffOperator};
use crate::error::{Error, Result};
use crate::grid::next_smooth;
use crate::spectral::{DivisorFloor, FourierField, LambdaFamily, NormParams, Truncation, I};

/// Forcing data and parameter family of one problem.
#[derive(Clone, Debug)]
pub struct KdVProblem {
    /// `d_x f(phi, x)`: real with zero space average.
    pub forcing: FourierField,
    pub family: LambdaFamily<()>,
    /// Size of the forcing in `|| . ||_{s,q}`.
    pub eps: f64,
    pub q: f64,
    pub norm: NormParams,
}

/// One forcing mode `amp e^{i(l.phi + k x)} + c.c.` of `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingMode {
    pub ell: Vec<i32>,
    pub k: i32,
    pub amp: C64,
}

impl KdVProblem {
    /// Validates a forcing `d_x f` and records its size.
    pub fn new(forcing: FourierField, family: LambdaFamily<()>, norm: NormParams, q: f64, eps0: f64) -> Result<Self> {
        if forcing.reality_defect() > 1e-14 * (1.0 + forcing.max_coeff()) {
            return Err(Error::Domain("forcing must be real".into()));
        }
        if forcing.x_average().max_coeff() > 0.0 {
            return Err(Error::Domain("forcing must have zero space average".into()));
        }
        let eps = forcing.norm_sp(&norm.with_p(q));
        if eps > eps0 {
            return Err(Error::Config(format!("forcing size {eps:.3e} exceeds eps0 = {eps0:.3e}")));
        }
        Ok(KdVProblem { forcing: forcing.with_real_flag(true), family, eps, q, norm })
    }

    /// Builds `d_x f` from modes of `f`, rescaled so that `||d_x f||_{s,q} = eps`.
    pub fn from_modes(
        trunc: &Arc<Truncation>,
        modes: &[ForcingMode],
        eps: f64,
        family: LambdaFamily<()>,
        norm: NormParams,
        q: f64,
        eps0: f64,
    ) -> Result<Self> {
        let mut f = FourierField::zeros(trunc, true);
        for m in modes {
            if m.k == 0 {
                return Err(Error::Config(format!("forcing mode l={:?} has k = 0", m.ell)));
            }
            let g = FourierField::real_mode(trunc, &m.ell, m.k, m.amp);
            if g.max_coeff() == 0.0 {
                return Err(Error::Config(format!("forcing mode l={:?}, k={} outside the truncation", m.ell, m.k)));
            }
            f = &f + &g;
        }
        let df = f.dx(1);
        let size = df.norm_sp(&norm.with_p(q));
        let df = if size > 0.0 { df.scale(eps / size) } else { df };
        Self::new(df, family, norm, q, eps0)
    }

    pub fn trunc(&self) -> &Arc<Truncation> {
        self.forcing.trunc()
    }

    pub fn omega(&self, lambda: f64) -> Vec<f64> {
        self.family.omega(lambda)
    }

    /// Diophantine floor used for `(omega . d_phi)^{-1}`, scaled with `lambda`.
    pub fn floor(&self, lambda: f64) -> DivisorFloor {
        DivisorFloor { alpha0: lambda * self.family.alpha0, tau0: self.family.tau0 }
    }

    /// Same problem on another truncation.
    pub fn embed(&self, trunc: &Arc<Truncation>) -> Self {
        KdVProblem { forcing: self.forcing.embed(trunc), ..self.clone() }
    }
}

/// Grid size per axis on which cubic terms are computed without aliasing.
fn cubic_grid(k: usize) -> usize {
    if k == 0 {
        1
    } else {
        next_smooth(4 * k + 1)
    }
}

/// Nonlinear part `10 u u3 + 20 u1 u2 + 30 u^2 u1 - 6 u2 u5 - 18 u3 u4`, exact
/// on the retained modes.
pub fn nonlinearity(u: &FourierField) -> FourierField {
    let tr = u.trunc();
    let (np, nx) = (cubic_grid(tr.kphi), cubic_grid(tr.kx));
    let d: Vec<Vec<C64>> = (0..=5).map(|j| u.dx(j).grid_values(np, nx)).collect();
    let g: Vec<C64> = (0..d[0].len())
        .map(|i| {
            let (u0, u1, u2, u3, u4, u5) = (d[0][i], d[1][i], d[2][i], d[3][i], d[4][i], d[5][i]);
            10.0 * u0 * u3 + 20.0 * u1 * u2 + 30.0 * u0 * u0 * u1 - 6.0 * u2 * u5 - 18.0 * u3 * u4
        })
        .collect();
    FourierField::from_grid(tr, g, np, nx, u.is_real())
}

/// The residual `F(u)` at frequency `omega`.
pub fn residual(u: &FourierField, prob: &KdVProblem, omega: &[f64]) -> FourierField {
    let mut f = &u.dphi_omega(omega) + &u.dx(5);
    f = &f + &nonlinearity(u);
    &f - &prob.forcing
}

/// Divergence-form coefficients `(a2, a1, a0)`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub a2: FourierField,
    pub a1: FourierField,
    pub a0: FourierField,
}

pub fn coeffs_a(u: &FourierField) -> Coefficients {
    let tr = u.trunc();
    let one = FourierField::constant(tr, 1.0);
    let u2 = u.dx(2);
    Coefficients {
        a2: &one - &u2.scale(6.0),
        a1: u.scale(10.0),
        a0: &u2.scale(10.0) + &u.mul(u).scale(30.0),
    }
}

/// Expanded coefficients `[a5*, a4*, a3*, a2*, a1*, a0*]` of
/// `L h = omega.d h + sum a_j* d_x^j h`.
pub fn coeffs_star(u: &FourierField) -> [FourierField; 6] {
    let tr = u.trunc();
    let one = FourierField::constant(tr, 1.0);
    let d: Vec<FourierField> = (0..=5).map(|j| u.dx(j)).collect();
    [
        &one - &d[2].scale(6.0),
        d[3].scale(-18.0),
        &d[0].scale(10.0) - &d[4].scale(18.0),
        &d[1].scale(20.0) - &d[5].scale(6.0),
        &d[2].scale(20.0) + &u.mul(u).scale(30.0),
        &d[3].scale(10.0) + &u.mul(&d[1]).scale(60.0),
    ]
}

/// `L(u)` split as the transport `omega . d_phi` plus a matrix part.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub omega: Vec<f64>,
    pub coeffs: Coefficients,
}

impl LinearizedOperator {
    pub fn new(u: &FourierField, omega: &[f64]) -> Self {
        LinearizedOperator { omega: omega.to_vec(), coeffs: coeffs_a(u) }
    }

    /// `d_x {d_x^2 [a2 d_x^2 h] + d_x [a1 d_x h] + a0 h}`.
    pub fn apply_spatial(&self, h: &FourierField) -> FourierField {
        let c = &self.coeffs;
        let t2 = c.a2.mul(&h.dx(2)).dx(2);
        let t1 = c.a1.mul(&h.dx(1)).dx(1);
        let t0 = c.a0.mul(h);
        (&(&t2 + &t1) + &t0).dx(1)
    }

    pub fn apply(&self, h: &FourierField) -> FourierField {
        &h.dphi_omega(&self.omega) + &self.apply_spatial(h)
    }

    /// Matrix of the spatial part on zero-average fields.
    pub fn matrix(&self) -> VarCoeffOperator {
        let c = &self.coeffs;
        let tr = c.a2.trunc().clone();
        let kx = tr.kx as i32;
        let mut a = VarCoeffOperator::zeros(&tr).with_hamiltonian(true);
        let n = a.size();
        for r in 0..n {
            let i = space_mode(tr.kx, r);
            for col in 0..n {
                let j = space_mode(tr.kx, col);
                let d = i - j;
                if d.abs() > kx {
                    continue;
                }
                let (ii, jj) = (I * i as f64, I * j as f64);
                let w2 = ii.powu(3) * jj.powu(2);
                let w1 = ii.powu(2) * jj;
                let w0 = ii;
                let (s2, s1, s0) = (c.a2.x_mode(d), c.a1.x_mode(d), c.a0.x_mode(d));
                let b = a.block_mut(i, j);
                for t in 0..b.len() {
                    b[t] = w2 * s2[t] + w1 * s1[t] + w0 * s0[t];
                }
            }
        }
        a
    }
}

/// The self-adjoint part `G` with `L - omega.d = d_x G`.
pub fn apply_g(c: &Coefficients, h: &FourierField) -> FourierField {
    let t2 = c.a2.mul(&h.dx(2)).dx(2);
    let t1 = c.a1.mul(&h.dx(1)).dx(1);
    &(&t2 + &t1) + &c.a0.mul(h)
}

/// `L(0) v = g` by diagonal division: `v = g / (i(omega.l + k^5))`.
pub fn invert_l0(g: &FourierField, omega: &[f64], floor_alpha: f64, tau: f64) -> Result<FourierField> {
    let tr = g.trunc().clone();
    let mut v = FourierField::zeros(&tr, g.is_real());
    for t in 0..tr.nt() {
        let w = tr.omega_dot(t, omega);
        for k in -(tr.kx as i32)..=tr.kx as i32 {
            if k == 0 {
                continue;
            }
            let k5 = (k as f64).powi(5);
            let d = w + k5;
            let fl = floor_alpha * k5.abs() / tr.bracket(t).powf(tau);
            if d.abs() < fl {
                return Err(Error::Excluded(Box::new(crate::sieve::ResonanceRecord::first(
                    tr.ell(t).to_vec(),
                    k,
                    d,
                    fl,
                ))));
            }
            v.set_at(t, k, g.at(t, k) / (I * d));
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Arc<Truncation>, Vec<f64>) {
        (Truncation::new(2, 4, 8), vec![1.1, 1.1 * 0.5 * (1.0 + 5f64.sqrt())])
    }

    fn problem(tr: &Arc<Truncation>, forcing: FourierField) -> KdVProblem {
        let fam = LambdaFamily::new(vec![(1.1, ())], vec![1.0, 0.5 * (1.0 + 5f64.sqrt())], 0.01, 1.2).unwrap();
        let _ = tr;
        KdVProblem::new(forcing, fam, NormParams { s: 0.1, p: 0.0, s0: 3 }, 0.0, 1.0).unwrap()
    }

    #[test]
    fn trivial_residuals() {
        let (tr, om) = setup();
        let p0 = problem(&tr, FourierField::zeros(&tr, true));
        assert_eq!(residual(&FourierField::zeros(&tr, true), &p0, &om).max_coeff(), 0.0);
        let f = FourierField::real_mode(&tr, &[1, 0], 2, C64::new(1e-3, 0.0));
        let p = problem(&tr, f.clone());
        let r = residual(&FourierField::zeros(&tr, true), &p, &om);
        assert!((&r + &f).max_coeff() == 0.0);
    }

    #[test]
    fn residual_matches_pointwise_terms() {
        let (tr, om) = setup();
        let p0 = problem(&tr, FourierField::zeros(&tr, true));
        let delta = 1e-3;
        let u = FourierField::real_mode(&tr, &[0, 0], 1, C64::new(0.0, -delta / 2.0));
        let r = residual(&u, &p0, &om);
        // u = delta sin x: evaluate each term on a fine x grid.
        let n = 64;
        let mut vals = vec![C64::new(0.0, 0.0); n];
        for (m, v) in vals.iter_mut().enumerate() {
            let x = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            let (s, c) = (delta * x.sin(), delta * x.cos());
            let (u0, u1, u2, u3, u4, u5) = (s, c, -s, -c, s, c);
            *v = C64::new(u5 + 10.0 * u0 * u3 + 20.0 * u1 * u2 + 30.0 * u0 * u0 * u1 - 6.0 * u2 * u5 - 18.0 * u3 * u4, 0.0);
        }
        for m in [0usize, 7, 33] {
            let x = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
            assert!((r.eval(&[0.2, 0.9], x) - vals[m]).norm() < 1e-12);
        }
    }

    #[test]
    fn starred_coefficients_match_divergence_form() {
        let (tr, om) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u = FourierField::random(&tr, &mut rng, 1e-2, 1.0, true, true);
        let h = FourierField::random(&tr, &mut rng, 1.0, 1.0, true, true);
        let l = LinearizedOperator::new(&u, &om);
        let st = coeffs_star(&u);
        let mut e = h.dphi_omega(&om);
        for (j, a) in st.iter().enumerate() {
            e = &e + &a.mul(&h.dx(5 - j as u32));
        }
        // Both sides are exact products of truncated fields only up to the
        // truncation tail; compare against a larger truncation.
        let big = Truncation::new(2, 8, 24);
        let (ub, hb) = (u.embed(&big), h.embed(&big));
        let lb = LinearizedOperator::new(&ub, &om).apply(&hb).embed(&tr);
        let stb = coeffs_star(&ub);
        let mut eb = hb.dphi_omega(&om);
        for (j, a) in stb.iter().enumerate() {
            eb = &eb + &a.mul(&hb.dx(5 - j as u32));
        }
        let eb = eb.embed(&tr);
        assert!((&lb - &eb).max_coeff() < 1e-10 * lb.max_coeff());
        let _ = (l, e);
    }

    #[test]
    fn zero_state_operator() {
        let (tr, om) = setup();
        let l = LinearizedOperator::new(&FourierField::zeros(&tr, true), &om);
        let c = coeffs_a(&FourierField::zeros(&tr, true));
        assert!((&c.a2 - &FourierField::constant(&tr, 1.0)).max_coeff() == 0.0);
        assert!(c.a1.max_coeff() == 0.0 && c.a0.max_coeff() == 0.0);
        let h = FourierField::mode(&tr, &[1, -1], 3, C64::new(1.0, 0.0));
        let want = &h.dphi_omega(&om) + &h.dx(5);
        assert!((&l.apply(&h) - &want).max_coeff() < 1e-12);
    }

    #[test]
    fn matrix_matches_apply() {
        let (tr, om) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let u = FourierField::random(&tr, &mut rng, 1e-2, 0.8, true, true);
        let h = FourierField::random(&tr, &mut rng, 1.0, 0.8, true, true);
        let l = LinearizedOperator::new(&u, &om);
        let a = l.apply_spatial(&h);
        let b = l.matrix().apply(&h);
        assert!((&a - &b).max_coeff() < 1e-9 * a.max_coeff());
    }

    #[test]
    fn linearization_is_derivative_of_residual() {
        let (tr, om) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = problem(&tr, FourierField::zeros(&tr, true));
        for _ in 0..20 {
            let u = FourierField::random(&tr, &mut rng, 1e-2, 1.0, true, true);
            let h = FourierField::random(&tr, &mut rng, 1.0, 1.0, true, true);
            let t = 1e-6;
            let fp = residual(&(&u + &h.scale(t)), &p, &om);
            let fm = residual(&(&u - &h.scale(t)), &p, &om);
            let fd = (&fp - &fm).scale(0.5 / t);
            let lh = LinearizedOperator::new(&u, &om).apply(&h);
            let err = (&fd - &lh).max_coeff() / lh.max_coeff();
            assert!(err < 1e-5, "relative error {err:e}");
        }
    }

    #[test]
    fn coefficient_derivative_matches_difference() {
        let (tr, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let u = FourierField::random(&tr, &mut rng, 1e-2, 1.0, true, true);
        let h = FourierField::random(&tr, &mut rng, 1.0, 1.0, true, true);
        let t = 1e-6;
        let (c0, c1) = (coeffs_a(&u), coeffs_a(&(&u + &h.scale(t))));
        // d_u a2[h] = -6 h_xx, d_u a1[h] = 10 h, d_u a0[h] = 10 h_xx + 60 u h
        let da2 = (&c1.a2 - &c0.a2).scale(1.0 / t);
        assert!((&da2 - &h.dx(2).scale(-6.0)).max_coeff() < 1e-5 * da2.max_coeff());
        let da1 = (&c1.a1 - &c0.a1).scale(1.0 / t);
        assert!((&da1 - &h.scale(10.0)).max_coeff() < 1e-5 * da1.max_coeff());
        let da0 = (&c1.a0 - &c0.a0).scale(1.0 / t);
        let want = &h.dx(2).scale(10.0) + &u.mul(&h).scale(60.0);
        assert!((&da0 - &want).max_coeff() < 1e-5 * da0.max_coeff());
    }

    #[test]
    fn spatial_part_is_dx_of_self_adjoint() {
        let (tr, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let u = FourierField::random(&tr, &mut rng, 1e-2, 1.0, true, true);
        let c = coeffs_a(&u);
        for _ in 0..5 {
            let a = FourierField::random(&tr, &mut rng, 1.0, 1.5, true, true);
            let b = FourierField::random(&tr, &mut rng, 1.0, 1.5, true, true);
            // <G a, b> = <a, G b> as space-time averages of real fields
            let lhs = apply_g(&c, &a).mul(&b).mean().re;
            let rhs = a.mul(&apply_g(&c, &b)).mean().re;
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn residual_preserves_reality_and_average() {
        let (tr, om) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let f = FourierField::random(&tr, &mut rng, 1e-4, 1.0, true, true);
        let p = problem(&tr, f);
        let u = FourierField::random(&tr, &mut rng, 1e-2, 1.0, true, true);
        let r = residual(&u, &p, &om);
        assert!(r.reality_defect() < 1e-15);
        assert!(r.x_average().max_coeff() < 1e-16);
    }
}
