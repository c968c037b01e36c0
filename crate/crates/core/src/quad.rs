//! Adaptive Gauss–Kronrod (7/15) integration on intervals with explicit
//! breakpoints, plus a nested 2-D wrapper.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("quadrature did not reach tolerance: estimate {estimate:e}, error {error:e} after {evaluations} panels")]
pub struct QuadratureError {
    pub estimate: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 0.0, max_panels: 4000 }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
// Gauss weights for the odd Kronrod nodes 1, 3, 5, 7
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over `[a, b]`, splitting first at every breakpoint that
/// falls strictly inside. Panels are bisected greedily by largest error.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<Quad, QuadratureError> {
    if b <= a {
        return Ok(Quad { value: 0.0, error: 0.0 });
    }
    let mut knots: Vec<f64> = std::iter::once(a)
        .chain(breaks.iter().copied().filter(|&x| x > a && x < b))
        .chain(std::iter::once(b))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();

    // (a, b, value, error)
    let mut panels: Vec<(f64, f64, f64, f64)> = knots
        .windows(2)
        .map(|w| {
            let (v, e) = gk15(&mut f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let value: f64 = panels.iter().map(|p| p.2).sum();
        let error: f64 = panels.iter().map(|p| p.3).sum();
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(Quad { value, error });
        }
        if panels.len() >= opts.max_panels {
            return Err(QuadratureError { estimate: value, error, evaluations: panels.len() });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        if !(mid > pa && mid < pb) {
            // interval exhausted at machine precision
            return Err(QuadratureError { estimate: value, error, evaluations: panels.len() });
        }
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

/// Iterated integral `∫ dy ∫ dx f(x, y)` where the inner range and inner
/// breakpoints may depend on `y`. The inner solves use a tighter tolerance
/// than the outer one so their errors do not dominate.
pub fn integrate_2d<F, R>(
    f: F,
    inner: R,
    y0: f64,
    y1: f64,
    y_breaks: &[f64],
    opts: QuadOptions,
) -> Result<Quad, QuadratureError>
where
    F: Fn(f64, f64) -> f64,
    R: Fn(f64) -> Vec<(f64, f64, Vec<f64>)>,
{
    let inner_opts = QuadOptions { rel_tol: opts.rel_tol * 0.1, ..opts };
    let mut failure: Option<QuadratureError> = None;
    let mut inner_err = 0.0;
    let outer = integrate(
        |y| {
            let mut total = 0.0;
            for (a, b, br) in inner(y) {
                match integrate(|x| f(x, y), a, b, &br, inner_opts) {
                    Ok(q) => {
                        total += q.value;
                        inner_err += q.error;
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
            total
        },
        y0,
        y1,
        y_breaks,
        opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    outer
}
