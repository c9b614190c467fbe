use std::sync::Arc;

use proptest::prelude::*;
use qpkdv::decay::{DecayKind, VarCoeffOperator};
use qpkdv::{FourierField, NormParams, Truncation, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tr() -> Arc<Truncation> {
    Truncation::new(2, 8, 16)
}

fn field(seed: u64, decay: f64) -> FourierField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FourierField::random(&tr(), &mut rng, 1.0, decay, true, false)
}

fn np(s: f64, p: f64) -> NormParams {
    NormParams { s, p, s0: 0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sandwich(seed in any::<u64>(), decay in 0.0..1.0f64, s in 0.0..0.5f64, p in 1.0..3.0f64) {
        let u = field(seed, decay);
        let mid = u.norm_sp(&np(s, 2.0 * p));
        prop_assert!(u.norm_frak(&np(s, p)) <= mid * (1.0 + 1e-12));
        prop_assert!(mid <= 2f64.powf(p) * u.norm_frak(&np(s, 2.0 * p)) * (1.0 + 1e-12));
    }

    #[test]
    fn sandwich_with_proved_constant(seed in any::<u64>(), decay in 0.0..4.0f64, s in 0.0..0.5f64, p in 0.0..3.0f64) {
        let u = field(seed, decay);
        let mid = u.norm_sp(&np(s, 2.0 * p));
        prop_assert!(mid <= 4f64.powf(p) * u.norm_frak(&np(s, 2.0 * p)) * (1.0 + 1e-12));
    }

    #[test]
    fn smoothing(seed in any::<u64>(), decay in 0.0..1.0f64, s in 0.05..0.5f64, frac in 0.05..0.95f64, p in 0.0..2.0f64, nu in 0.5..3.0f64) {
        let u = field(seed, decay);
        let sigma = frac * s;
        let c = (2.0 * sigma).exp() * (nu / (std::f64::consts::E * sigma)).powf(nu);
        prop_assert!(u.norm_sp(&np(s - sigma, p + nu)) <= c * u.norm_sp(&np(s, p)) * (1.0 + 1e-12));
    }

    #[test]
    fn field_algebra(a in any::<u64>(), b in any::<u64>(), p in 1.0..3.0f64) {
        let (u, v) = (field(a, 0.5), field(b, 0.5));
        let t = tr();
        let n = NormParams { s: 0.1, p, s0: 0 };
        let sum: f64 = (0..t.nt())
            .flat_map(|i| (-(t.kx as i32)..=t.kx as i32).map(move |k| (i, k)))
            .map(|(i, k)| (t.bracket(i) + (k.unsigned_abs() as f64).max(1.0)).powf(-2.0 * p))
            .sum();
        let c = 2.0 * 2f64.powf(p - 1.0).max(1.0) * sum.sqrt();
        prop_assert!(u.mul(&v).norm_sp(&n) <= c * u.norm_sp(&n) * v.norm_sp(&n));
    }

    #[test]
    fn primitive_is_right_inverse(seed in any::<u64>()) {
        let u = field(seed, 0.5).without_x_average();
        let back = u.dx_inv().unwrap().dx(1);
        prop_assert!((&back - &u).max_coeff() < 1e-14);
        prop_assert!(back.is_real());
    }

    #[test]
    fn products_keep_reality(a in any::<u64>(), b in any::<u64>()) {
        let w = field(a, 0.5).mul(&field(b, 0.5));
        prop_assert!(w.is_real());
        prop_assert!(w.reality_defect() < 1e-13);
    }
}

#[test]
fn upper_sandwich_needs_four_to_p_on_low_modes() {
    let u = FourierField::constant(&tr(), 1.0);
    let (p, s) = (1.0, 0.0);
    let mid = u.norm_sp(&np(s, 2.0 * p));
    let frak = u.norm_frak(&np(s, 2.0 * p));
    assert!(mid > 2f64.powf(p) * frak);
    assert!((mid - 4f64.powf(p) * frak).abs() < 1e-12);
}

#[test]
fn smoothing_constant_without_margin_fails_on_axis_mode() {
    let u = FourierField::real_mode(&tr(), &[0, 0], 9, C64::new(1.0, 0.0));
    let (s, sigma, nu) = (0.2, 0.1, 1.0);
    let c = (nu / (std::f64::consts::E * sigma)).powf(nu);
    let ratio = u.norm_sp(&np(s - sigma, nu)) / u.norm_sp(&np(s, 0.0));
    assert!(ratio > c);
    assert!(ratio <= (2.0 * sigma).exp() * c);
}

#[test]
fn decay_algebra_constants() {
    let t = Truncation::new(2, 3, 6);
    let n = NormParams { s: 0.1, p: 2.0, s0: 2 };
    let m = 2f64.powf(n.p - 1.0).max(1.0);
    let s_t: f64 = (0..t.nt()).map(|i| (t.bracket(i) + 1.0).powf(-2.0 * n.p)).sum();
    let s_x: f64 = (-(2 * t.kx as i32)..=2 * t.kx as i32).map(|i| (i.unsigned_abs() as f64).max(1.0).powf(-2.0 * n.p)).sum();
    let c = 4.0 * m * m * (s_t * s_x).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let a = VarCoeffOperator::random(&t, &mut rng, 1.0, 0.3);
        let b = VarCoeffOperator::random(&t, &mut rng, 1.0, 0.3);
        let d = VarCoeffOperator::random(&t, &mut rng, 1.0, 0.3);
        for kind in [DecayKind::Plain, DecayKind::Tilde, DecayKind::Hat, DecayKind::Rho] {
            let ab = a.mul(&b);
            assert!(ab.decay_norm(kind, &n) <= c * a.decay_norm(kind, &n) * b.decay_norm(kind, &n));
        }
        let lhs = a.mul(&b).mul(&d).decay_norm(DecayKind::Varsigma, &n);
        let rhs = a.decay_norm(DecayKind::Rho, &n) * b.decay_norm(DecayKind::Varsigma, &n) * d.decay_norm(DecayKind::Rho, &n);
        assert!(lhs <= c * c * rhs);
    }
}

#[test]
fn multiplication_operator_matches_product() {
    let t = Truncation::new(2, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = FourierField::random(&t, &mut rng, 1.0, 0.8, true, false).without_x_average();
    let h = FourierField::random(&t, &mut rng, 1.0, 0.8, true, true);
    let op = VarCoeffOperator::from_multiplier(&g);
    let direct = g.mul(&h).without_x_average();
    assert!((&op.apply(&h) - &direct).max_coeff() < 1e-12);
}

#[test]
fn exponential_inverse_pair() {
    let t = Truncation::new(2, 3, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phi = VarCoeffOperator::random(&t, &mut rng, 1e-3, 1.0);
    let e = phi.exp(1e-16).unwrap();
    let ei = phi.scale(C64::new(-1.0, 0.0)).exp(1e-16).unwrap();
    let id = VarCoeffOperator::identity(&t);
    // truncated products only cancel up to a small multiple of |phi|^2
    let defect = e.mul(&ei).sub(&id).max_coeff();
    assert!(defect < 1e-3 * phi.mul(&phi).max_coeff());

    let d = VarCoeffOperator::diagonal(&t, |i| 1e-2 * i as f64);
    let ed = d.exp(1e-16).unwrap().mul(&d.scale(C64::new(-1.0, 0.0)).exp(1e-16).unwrap());
    assert!(ed.sub(&id).max_coeff() < 1e-14);
}
