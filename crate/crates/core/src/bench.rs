//! Benchmark objective functions and the tabular candidate-pool problem.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::Scalar;
use crate::types::OutcomeVector;

pub const DTLZ2_OBJECTIVES: usize = 6;
pub const DTLZ2_DIMS: usize = 7;
pub const WFG9_OBJECTIVES: usize = 8;
pub const WFG9_POSITION: usize = 14;
pub const WFG9_DISTANCE: usize = 20;
pub const WFG9_DIMS: usize = WFG9_POSITION + WFG9_DISTANCE;

fn check_box<T: Scalar>(x: &[T], d: usize, what: &'static str) -> Result<()> {
    check_dim(what, d, x.len())?;
    if let Some(v) = x.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
        return Err(Error::invalid(what, format!("input {v} outside [0,1]")));
    }
    Ok(())
}

/// DTLZ2 with `m` objectives; the last `x.len() - m + 1` variables are distance variables.
pub fn dtlz2_general<T: Scalar>(x: &[T], m: usize) -> Vec<T> {
    let half_pi = T::FRAC_PI_2();
    let half = T::lit(0.5);
    let g: T = x[m - 1..].iter().map(|v| (*v - half) * (*v - half)).sum();
    let scale = T::one() + g;
    (0..m)
        .map(|i| {
            let mut f = scale;
            for v in &x[..m - 1 - i] {
                f = f * (*v * half_pi).cos();
            }
            if i > 0 {
                f = f * (x[m - 1 - i] * half_pi).sin();
            }
            f
        })
        .collect()
}

/// DTLZ2 with 6 objectives over `[0,1]^7`.
pub fn dtlz2<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    check_box(x, DTLZ2_DIMS, "dtlz2 input")?;
    Ok(dtlz2_general(x, DTLZ2_OBJECTIVES))
}

/// Distance function `g` of DTLZ2 for `m` objectives.
pub fn dtlz2_g<T: Scalar>(x: &[T], m: usize) -> T {
    let half = T::lit(0.5);
    x[m - 1..].iter().map(|v| (*v - half) * (*v - half)).sum()
}

mod wfg {
    use crate::numeric::Scalar;

    #[inline]
    pub fn correct_to_01<T: Scalar>(a: T) -> T {
        let eps = T::lit(1e-10);
        if a <= T::zero() && a >= -eps {
            T::zero()
        } else if a >= T::one() && a <= T::one() + eps {
            T::one()
        } else {
            a
        }
    }

    pub fn b_param<T: Scalar>(y: T, u: T, a: T, b: T, c: T) -> T {
        let v = a - (T::one() - T::lit(2.0) * u) * ((T::lit(0.5) - u).floor() + a).abs();
        correct_to_01(y.powf(b + (c - b) * v))
    }

    pub fn s_decept<T: Scalar>(y: T, a: T, b: T, c: T) -> T {
        let one = T::one();
        let t1 = (y - a + b).floor() * (one - c + (a - b) / b) / (a - b);
        let t2 = (a + b - y).floor() * (one - c + (one - a - b) / b) / (one - a - b);
        correct_to_01(one + ((y - a).abs() - b) * (t1 + t2 + one / b))
    }

    pub fn s_multi<T: Scalar>(y: T, a: T, b: T, c: T) -> T {
        let two = T::lit(2.0);
        let t1 = (y - c).abs() / (two * ((c - y).floor() + c));
        let t2 = (T::lit(4.0) * a + two) * T::PI() * (T::lit(0.5) - t1);
        correct_to_01((T::one() + t2.cos() + T::lit(4.0) * b * t1 * t1) / (b + two))
    }

    pub fn r_nonsep<T: Scalar>(y: &[T], a: usize) -> T {
        let n = y.len();
        let mut num = T::zero();
        for j in 0..n {
            num = num + y[j];
            for k in 0..a.saturating_sub(1) {
                num = num + (y[j] - y[(j + k + 1) % n]).abs();
            }
        }
        let af = T::lit(a as f64);
        let half_ceil = (af / T::lit(2.0)).ceil();
        let den = T::lit(n as f64) * half_ceil * (T::one() + T::lit(2.0) * af - T::lit(2.0) * half_ceil) / af;
        correct_to_01(num / den)
    }
}

/// WFG9 with `m` objectives, `k` position and `x.len() - k` distance variables.
///
/// Inputs in `[0,1]` stand for the native `z_i in [0, 2i]` already divided by
/// their upper bounds, so they enter the transformation chain unchanged.
pub fn wfg9_general<T: Scalar>(x: &[T], m: usize, k: usize) -> Vec<T> {
    let n = x.len();
    let l = n - k;
    // t1: parameter-dependent bias, each variable biased by the mean of those after it
    let mut y = x.to_vec();
    let mut tail_sum = T::zero();
    for i in (0..n - 1).rev() {
        tail_sum = tail_sum + x[i + 1];
        let u = tail_sum / T::lit((n - 1 - i) as f64);
        y[i] = wfg::b_param(x[i], u, T::lit(0.98 / 49.98), T::lit(0.02), T::lit(50.0));
    }
    // t2: deceptive shift on position, multimodal shift on distance variables
    for (i, v) in y.iter_mut().enumerate() {
        *v = if i < k {
            wfg::s_decept(*v, T::lit(0.35), T::lit(0.001), T::lit(0.05))
        } else {
            wfg::s_multi(*v, T::lit(30.0), T::lit(95.0), T::lit(0.35))
        };
    }
    // t3: non-separable reduction to m values
    let group = k / (m - 1);
    let mut t: Vec<T> = (0..m - 1)
        .map(|i| wfg::r_nonsep(&y[i * group..(i + 1) * group], group))
        .collect();
    t.push(wfg::r_nonsep(&y[k..], l));
    // concave shape, A = 1 so the position parameters pass through unchanged
    let x_last = t[m - 1];
    let half_pi = T::FRAC_PI_2();
    (1..=m)
        .map(|obj| {
            let mut h = T::one();
            for v in &t[..m - obj] {
                h = h * (*v * half_pi).sin();
            }
            if obj != 1 {
                h = h * (t[m - obj] * half_pi).cos();
            }
            x_last + T::lit(2.0 * obj as f64) * wfg::correct_to_01(h)
        })
        .collect()
}

/// WFG9 with 8 objectives, 14 position and 20 distance variables.
pub fn wfg9<T: Scalar>(x: &[T]) -> Result<Vec<T>> {
    check_box(x, WFG9_DIMS, "wfg9 input")?;
    Ok(wfg9_general(x, WFG9_OBJECTIVES, WFG9_POSITION))
}

/// Per-column affine map onto `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for j in 0..d {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        Self { min, max }
    }

    fn span(&self, j: usize) -> f64 {
        let s = self.max[j] - self.min[j];
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, x)| (x - self.min[j]) / self.span(j))
            .collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, x)| x * self.span(j) + self.min[j])
            .collect()
    }
}

/// A finite pool of pre-evaluated designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularProblem {
    /// Designs normalised to `[0,1]^d`.
    pub designs: Vec<Vec<f64>>,
    /// Objectives normalised to `[0,1]` per column.
    pub outcomes: Vec<Vec<f64>>,
    pub x_scaler: MinMaxScaler,
    pub y_scaler: MinMaxScaler,
    pub objective_names: Vec<String>,
}

impl TabularProblem {
    /// Build from raw `(x, y)` rows; exact duplicate rows are merged.
    pub fn from_rows(rows: Vec<(Vec<f64>, Vec<f64>)>, objective_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Table("empty table".into()));
        }
        let d = rows[0].0.len();
        let l = rows[0].1.len();
        if d == 0 || l == 0 {
            return Err(Error::Table("table needs at least one x and one y column".into()));
        }
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut xs = Vec::new();
        let mut ys: Vec<Vec<f64>> = Vec::new();
        for (i, (x, y)) in rows.into_iter().enumerate() {
            if x.len() != d || y.len() != l {
                return Err(Error::Table(format!("row {}: ragged row", i + 1)));
            }
            if x.iter().chain(&y).any(|v| !v.is_finite()) {
                return Err(Error::Table(format!("row {}: non-finite value", i + 1)));
            }
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            match seen.get(&key) {
                Some(&j) if ys[j] != y => {
                    return Err(Error::Table(format!(
                        "row {}: duplicate design with conflicting outcomes",
                        i + 1
                    )))
                }
                Some(_) => continue,
                None => {
                    seen.insert(key, xs.len());
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        let x_scaler = MinMaxScaler::fit(&xs);
        let y_scaler = MinMaxScaler::fit(&ys);
        Ok(Self {
            designs: xs.iter().map(|x| x_scaler.normalize(x)).collect(),
            outcomes: ys.iter().map(|y| y_scaler.normalize(y)).collect(),
            x_scaler,
            y_scaler,
            objective_names,
        })
    }

    /// Load a CSV with header `x1..xd,y1..yL`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Table(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_owned())
            .collect();
        let d = header.iter().take_while(|h| h.starts_with('x')).count();
        let l = header.len() - d;
        let expected: Vec<String> = (1..=d)
            .map(|i| format!("x{i}"))
            .chain((1..=l).map(|i| format!("y{i}")))
            .collect();
        if d == 0 || l == 0 || header != expected {
            return Err(Error::Table(format!(
                "header must be x1..xd,y1..yL, got {}",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Table(format!("line {line}: {e}")))?;
            if rec.len() != d + l {
                return Err(Error::Table(format!("line {line}: ragged row")));
            }
            let vals = rec
                .iter()
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Table(format!("line {line}: not a decimal number: {c:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push((vals[..d].to_vec(), vals[d..].to_vec()));
        }
        let names = header[d..].to_vec();
        Self::from_rows(rows, names)
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn row_of(&self, x: &[f64]) -> Option<usize> {
        self.designs.iter().position(|d| d.as_slice() == x)
    }
}

/// An optimisation problem the loop can evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Problem {
    Dtlz2,
    Wfg9,
    Tabular(Box<TabularProblem>),
}

impl Problem {
    pub fn by_id(id: &str, table: Option<&Path>) -> Result<Self> {
        match id {
            "dtlz2" => Ok(Problem::Dtlz2),
            "wfg9" => Ok(Problem::Wfg9),
            "tabular" => {
                let path = table.ok_or_else(|| Error::invalid("problem.table", "required for tabular"))?;
                Ok(Problem::Tabular(Box::new(TabularProblem::from_csv(path)?)))
            }
            other => Err(Error::invalid("problem.id", format!("unknown problem {other:?}"))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Problem::Dtlz2 => "dtlz2",
            Problem::Wfg9 => "wfg9",
            Problem::Tabular(_) => "tabular",
        }
    }

    pub fn objectives(&self) -> usize {
        match self {
            Problem::Dtlz2 => DTLZ2_OBJECTIVES,
            Problem::Wfg9 => WFG9_OBJECTIVES,
            Problem::Tabular(t) => t.outcomes[0].len(),
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            Problem::Dtlz2 => DTLZ2_DIMS,
            Problem::Wfg9 => WFG9_DIMS,
            Problem::Tabular(t) => t.designs[0].len(),
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, Problem::Tabular(_))
    }

    pub fn pool(&self) -> Option<&TabularProblem> {
        match self {
            Problem::Tabular(t) => Some(t),
            _ => None,
        }
    }

    pub fn objective_names(&self) -> Vec<String> {
        match self {
            Problem::Tabular(t) => t.objective_names.clone(),
            _ => (1..=self.objectives()).map(|i| format!("f{i}")).collect(),
        }
    }

    /// Noise-free objective values; tabular problems look the design up in the pool.
    pub fn evaluate(&self, x: &[f64]) -> Result<OutcomeVector> {
        let y = match self {
            Problem::Dtlz2 => dtlz2(x)?,
            Problem::Wfg9 => wfg9(x)?,
            Problem::Tabular(t) => {
                check_dim("tabular design", self.dims(), x.len())?;
                let row = t
                    .row_of(x)
                    .ok_or_else(|| Error::invalid("tabular design", "design is not a pool row"))?;
                t.outcomes[row].clone()
            }
        };
        OutcomeVector::new(y)
    }
}
