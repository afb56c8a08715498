//! Linear regression, Bland–Altman agreement, and the paired t-test.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares with intercept. `x` must not be constant.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<Regression> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!(
            "regression needs >= 2 paired points, got {}/{}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Contract(
            "regression undefined: x is constant".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|&v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let fit = intercept + slope * a;
            (b - fit) * (b - fit)
        })
        .sum();
    // Constant y fits exactly but has no variance to explain.
    let r_squared = if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(Regression {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BlandAltman {
    pub mean_bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bland–Altman agreement of paired measurements: differences d = a − b,
/// bias = mean(d), limits of agreement = bias ± 1.96·sd (sample sd, n−1).
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract(format!(
            "bland_altman needs >= 2 paired points, got {}/{}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let n = d.len() as f64;
    let bias = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|&v| (v - bias) * (v - bias)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    Ok(BlandAltman {
        mean_bias: bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
    })
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct PairedTTest {
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    /// True when the differences have zero variance, making the statistic
    /// degenerate (p forced to 0 for a nonzero mean, 1 for a zero mean).
    pub degenerate_variance: bool,
}

/// Two-sided paired t-test: t = mean(d) / (sd(d)/√n), df = n − 1.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract(format!(
            "paired t-test needs >= 2 paired points, got {}/{}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let df = n - 1.0;
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest {
                t_statistic: 0.0,
                df,
                p_value: 1.0,
                degenerate_variance: true,
            }
        } else {
            PairedTTest {
                t_statistic: if mean > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                df,
                p_value: 0.0,
                degenerate_variance: true,
            }
        });
    }
    let t = mean / (sd / n.sqrt());
    let p = two_sided_t_pvalue(t, df);
    Ok(PairedTTest {
        t_statistic: t,
        df,
        p_value: p,
        degenerate_variance: false,
    })
}

/// Two-sided p-value of the Student-t statistic:
/// p = I_{ν/(ν+t²)}(ν/2, 1/2) via the regularized incomplete beta function.
pub fn two_sided_t_pvalue(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = df / (df + t * t);
    incomplete_beta_reg(0.5 * df, 0.5, x)
}

/// Student-t CDF at `t` with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let p_two = two_sided_t_pvalue(t, df);
    if t >= 0.0 {
        1.0 - 0.5 * p_two
    } else {
        0.5 * p_two
    }
}

/// Regularized incomplete beta I_x(a, b), evaluated with the continued
/// fraction of the incomplete beta (modified Lentz), |err| well below 1e-10
/// for moderate (a, b).
fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fastest for x <= (a+1)/(a+b+2);
    // otherwise use the symmetry I_x(a,b) = 1 − I_{1−x}(b,a). Equality must
    // stay in the first branch or the symmetry recursion never terminates.
    if x <= (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - incomplete_beta_reg(b, a, 1.0 - x)
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Γ(x) (g = 7, n = 9), |rel err| < 1e-13.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
