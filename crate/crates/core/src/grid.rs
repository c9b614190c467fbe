//! Multidimensional FFT helpers shared by the collocation code.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

fn plan(n: usize, inverse: bool) -> Plan {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<(usize, bool), Plan>)>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    map.entry((n, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// Unnormalized in-place transform of a row-major array along every axis.
/// `inverse = true` uses the `e^{+i..}` kernel (coefficients to values).
/// Lines that are identically zero are skipped.
pub(crate) fn fft_nd(data: &mut [C64], dims: &[usize], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total, "fft_nd: shape mismatch");
    let zero = C64::new(0.0, 0.0);
    let mut stride = total;
    let mut buf = Vec::new();
    for &n in dims {
        stride /= n;
        if n == 1 {
            continue;
        }
        let fft = plan(n, inverse);
        let mut scratch = vec![zero; fft.get_inplace_scratch_len()];
        if stride == 1 {
            for line in data.chunks_exact_mut(n) {
                if line.iter().any(|z| *z != zero) {
                    fft.process_with_scratch(line, &mut scratch);
                }
            }
            continue;
        }
        // transpose each (n x stride) block so lines are contiguous
        let block = n * stride;
        buf.resize(block, zero);
        for chunk in data.chunks_exact_mut(block) {
            for j in 0..n {
                for inner in 0..stride {
                    buf[inner * n + j] = chunk[j * stride + inner];
                }
            }
            for line in buf.chunks_exact_mut(n) {
                if line.iter().any(|z| *z != zero) {
                    fft.process_with_scratch(line, &mut scratch);
                }
            }
            for j in 0..n {
                for inner in 0..stride {
                    chunk[j * stride + inner] = buf[inner * n + j];
                }
            }
        }
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}
