//! WFG9 written against the toolkit's conventions: raw inputs z_i in [0, 2i],
//! 1-based position/distance bookkeeping, one helper per transformation.

use std::f64::consts::PI;

const EPS: f64 = 1.0e-10;

fn clamp01(a: f64) -> f64 {
    if a <= 0.0 && a >= -EPS {
        0.0
    } else if a >= 1.0 && a <= 1.0 + EPS {
        1.0
    } else {
        a
    }
}

fn b_param(y: f64, u: f64, a: f64, b: f64, c: f64) -> f64 {
    let v = a - (1.0 - 2.0 * u) * ((0.5 - u).floor() + a).abs();
    clamp01(y.powf(b + (c - b) * v))
}

fn s_decept(y: f64, a: f64, b: f64, c: f64) -> f64 {
    let t1 = (y - a + b).floor() * (1.0 - c + (a - b) / b) / (a - b);
    let t2 = (a + b - y).floor() * (1.0 - c + (1.0 - a - b) / b) / (1.0 - a - b);
    clamp01(1.0 + ((y - a).abs() - b) * (t1 + t2 + 1.0 / b))
}

fn s_multi(y: f64, a: f64, b: f64, c: f64) -> f64 {
    let tmp1 = (y - c).abs() / (2.0 * ((c - y).floor() + c));
    let tmp2 = (4.0 * a + 2.0) * PI * (0.5 - tmp1);
    clamp01((1.0 + tmp2.cos() + 4.0 * b * tmp1 * tmp1) / (b + 2.0))
}

fn r_nonsep(y: &[f64], a: usize) -> f64 {
    let n = y.len();
    let mut num = 0.0;
    for j in 0..n {
        num += y[j];
        for k in 0..a.saturating_sub(1) {
            num += (y[j] - y[(1 + j + k) % n]).abs();
        }
    }
    let half = (a as f64 / 2.0).ceil();
    let den = n as f64 * half * (1.0 + 2.0 * a as f64 - 2.0 * half) / a as f64;
    clamp01(num / den)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn wfg9(z: &[f64], k: usize, m: usize) -> Vec<f64> {
    let n = z.len();
    let mut y: Vec<f64> = (0..n).map(|i| z[i] / (2.0 * (i + 1) as f64)).collect();

    let mut t1 = y.clone();
    for i in 0..n - 1 {
        let rest = mean(&y[i + 1..]);
        t1[i] = b_param(y[i], rest, 0.98 / 49.98, 0.02, 50.0);
    }
    y = t1;

    let t2: Vec<f64> = (0..n)
        .map(|i| {
            if i < k {
                s_decept(y[i], 0.35, 0.001, 0.05)
            } else {
                s_multi(y[i], 30.0, 95.0, 0.35)
            }
        })
        .collect();
    y = t2;

    let gap = k / (m - 1);
    let mut t3 = Vec::with_capacity(m);
    for i in 1..m {
        let head = (i - 1) * gap;
        let tail = i * gap;
        t3.push(r_nonsep(&y[head..tail], gap));
    }
    t3.push(r_nonsep(&y[k..], n - k));

    let xs: Vec<f64> = (0..m - 1).map(|i| t3[m - 1].max(1.0) * (t3[i] - 0.5) + 0.5).collect();
    let x_m = t3[m - 1];

    let mut f = Vec::with_capacity(m);
    for obj in 1..=m {
        let mut h = 1.0;
        for x in xs.iter().take(m - obj) {
            h *= (x * PI / 2.0).sin();
        }
        if obj > 1 {
            h *= (xs[m - obj] * PI / 2.0).cos();
        }
        f.push(x_m + 2.0 * obj as f64 * h);
    }
    f
}
