//! Balanced two-way fixed-effects ANOVA with interaction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub ss: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub ms: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub factor_a: Effect,
    pub factor_b: Effect,
    pub interaction: Effect,
    pub ss_error: f64,
    pub df_error: usize,
    pub ss_total: f64,
    pub grand_mean: f64,
}

/// Observations grouped as `cells[a][b][replicate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub levels_a: Vec<String>,
    pub levels_b: Vec<String>,
    pub cells: Vec<Vec<Vec<f64>>>,
}

impl AnovaTable {
    /// Groups `(a, b, value)` rows; levels keep first-seen order.
    pub fn from_observations<A, B>(rows: impl IntoIterator<Item = (A, B, f64)>) -> Self
    where
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut levels_a: Vec<String> = Vec::new();
        let mut levels_b: Vec<String> = Vec::new();
        let mut flat: Vec<(usize, usize, f64)> = Vec::new();
        for (a, b, v) in rows {
            let ia = index_of(&mut levels_a, a.as_ref());
            let ib = index_of(&mut levels_b, b.as_ref());
            flat.push((ia, ib, v));
        }
        let mut cells = vec![vec![Vec::new(); levels_b.len()]; levels_a.len()];
        for (ia, ib, v) in flat {
            cells[ia][ib].push(v);
        }
        AnovaTable {
            levels_a,
            levels_b,
            cells,
        }
    }

    pub fn anova(&self) -> Result<AnovaResult> {
        two_way_anova(&self.cells)
    }
}

impl AnovaResult {
    /// Fixed-layout table with one row per effect plus error and total.
    pub fn to_text(&self, name_a: &str, name_b: &str) -> String {
        let inter = format!("{name_a} x {name_b}");
        let width = [name_a.len(), name_b.len(), inter.len(), 8].into_iter().max().unwrap_or(8);
        let mut out = format!(
            "{:<width$} {:>14} {:>5} {:>14} {:>12} {:>10}\n",
            "source", "SS", "df", "MS", "F", "p"
        );
        for (name, e) in [(name_a, &self.factor_a), (name_b, &self.factor_b), (inter.as_str(), &self.interaction)] {
            out += &format!(
                "{:<width$} {:>14.6} {:>5} {:>14.6} {:>12.4} {:>10.4e}\n",
                name, e.ss, e.df_num, e.ms, e.f, e.p
            );
        }
        out += &format!(
            "{:<width$} {:>14.6} {:>5} {:>14.6}\n",
            "error",
            self.ss_error,
            self.df_error,
            self.ss_error / self.df_error as f64
        );
        let df_total = self.factor_a.df_num + self.factor_b.df_num + self.interaction.df_num + self.df_error;
        out += &format!("{:<width$} {:>14.6} {:>5}\n", "total", self.ss_total, df_total);
        out
    }
}

fn index_of(levels: &mut Vec<String>, key: &str) -> usize {
    match levels.iter().position(|l| l == key) {
        Some(i) => i,
        None => {
            levels.push(key.to_string());
            levels.len() - 1
        }
    }
}

pub fn two_way_anova(cells: &[Vec<Vec<f64>>]) -> Result<AnovaResult> {
    let a = cells.len();
    let b = cells.first().map_or(0, Vec::len);
    if a < 2 || b < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 levels per factor, got {a} x {b}"
        )));
    }
    if cells.iter().any(|row| row.len() != b) {
        return Err(Error::InvalidInput("ragged factor table".into()));
    }
    let r = cells[0][0].len();
    if cells.iter().flatten().any(|c| c.len() != r) {
        return Err(Error::InvalidInput(
            "unbalanced design: every cell needs the same number of replicates".into(),
        ));
    }
    if r < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 replicates per cell, got {r}"
        )));
    }
    if cells.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }

    let n = (a * b * r) as f64;
    let grand = cells.iter().flatten().flatten().sum::<f64>() / n;
    let cell_mean: Vec<Vec<f64>> = cells
        .iter()
        .map(|row| row.iter().map(|c| c.iter().sum::<f64>() / r as f64).collect())
        .collect();
    let mean_a: Vec<f64> = cell_mean
        .iter()
        .map(|row| row.iter().sum::<f64>() / b as f64)
        .collect();
    let mean_b: Vec<f64> = (0..b)
        .map(|j| cell_mean.iter().map(|row| row[j]).sum::<f64>() / a as f64)
        .collect();

    let ss_a = (b * r) as f64 * mean_a.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (a * r) as f64 * mean_b.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_ab = 0.0;
    let mut ss_err = 0.0;
    let mut ss_total = 0.0;
    for i in 0..a {
        for j in 0..b {
            let m = cell_mean[i][j];
            ss_ab += r as f64 * (m - mean_a[i] - mean_b[j] + grand).powi(2);
            for v in &cells[i][j] {
                ss_err += (v - m).powi(2);
                ss_total += (v - grand).powi(2);
            }
        }
    }

    let df_a = a - 1;
    let df_b = b - 1;
    let df_ab = df_a * df_b;
    let df_err = a * b * (r - 1);
    let ms_err = ss_err / df_err as f64;

    // all observations equal (up to rounding): no variation to attribute
    let scale = cells.iter().flatten().flatten().map(|v| v * v).sum::<f64>();
    let constant = ss_total <= 1e-24 * scale.max(f64::MIN_POSITIVE);
    if !constant && ss_err <= 1e-14 * ss_total {
        return Err(Error::InvalidInput(
            "degenerate design: zero within-cell variance".into(),
        ));
    }

    let effect = |ss: f64, df: usize| {
        let ms = ss / df as f64;
        let (f, p) = if constant {
            (0.0, 1.0)
        } else {
            let f = ms / ms_err;
            (f, f_sf(f, df as f64, df_err as f64))
        };
        Effect {
            ss,
            df_num: df,
            df_den: df_err,
            ms,
            f,
            p,
        }
    };

    Ok(AnovaResult {
        factor_a: effect(ss_a, df_a),
        factor_b: effect(ss_b, df_b),
        interaction: effect(ss_ab, df_ab),
        ss_error: ss_err,
        df_error: df_err,
        ss_total,
        grand_mean: grand,
    })
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
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
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Survival function P(F > f) of the F distribution.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if !(f > 0.0) {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn beta_reg_closed_forms() {
        // I_x(1, 1) = x, I_x(a, 1) = x^a
        for &x in &[0.1, 0.37, 0.9] {
            assert!((beta_reg(1.0, 1.0, x) - x).abs() < 1e-14);
            assert!((beta_reg(3.5, 1.0, x) - x.powf(3.5)).abs() < 1e-13);
        }
    }

    #[test]
    fn f_sf_closed_form_df2() {
        // d1 = 2: sf(f) = (1 + 2 f / d2)^(-d2/2)
        for &(f, d2) in &[(0.5f64, 4.0f64), (3.0, 10.0), (12.0, 60.0)] {
            let exact = (1.0 + 2.0 * f / d2).powf(-d2 / 2.0);
            assert!((f_sf(f, 2.0, d2) - exact).abs() < 1e-12);
        }
        assert_eq!(f_sf(0.0, 3.0, 7.0), 1.0);
    }

    #[test]
    fn constant_data_gives_zero_f() {
        let cells = vec![vec![vec![0.1; 3]; 4]; 3];
        let r = two_way_anova(&cells).unwrap();
        for e in [r.factor_a, r.factor_b, r.interaction] {
            assert_eq!(e.f, 0.0);
            assert_eq!(e.p, 1.0);
        }
    }

    #[test]
    fn design_errors() {
        let unbalanced = vec![
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![vec![1.0, 2.0, 3.0], vec![3.0, 4.0]],
        ];
        assert!(two_way_anova(&unbalanced).is_err());
        let one_rep = vec![vec![vec![1.0]; 2]; 2];
        assert!(two_way_anova(&one_rep).is_err());
        // cell-constant but differing between cells
        let degenerate = vec![vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![vec![3.0, 3.0], vec![5.0, 5.0]]];
        assert!(two_way_anova(&degenerate).is_err());
    }

    #[test]
    fn table_from_observations() {
        let rows = vec![
            ("30", "cork", 1.0),
            ("60", "cork", 2.0),
            ("30", "wool", 3.0),
            ("60", "wool", 4.0),
            ("30", "cork", 1.5),
            ("60", "cork", 2.5),
            ("30", "wool", 3.5),
            ("60", "wool", 4.0),
        ];
        let t = AnovaTable::from_observations(rows);
        assert_eq!(t.levels_a, vec!["30", "60"]);
        assert_eq!(t.cells[1][1], vec![4.0, 4.0]);
        assert!(t.anova().is_ok());
    }

    fn design() -> impl proptest::strategy::Strategy<Value = Vec<Vec<Vec<f64>>>> {
        use proptest::prelude::*;
        (2usize..5, 2usize..5, 2usize..5).prop_flat_map(|(a, b, r)| {
            proptest::collection::vec(
                proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, r), b),
                a,
            )
        })
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn sums_of_squares_add_up(cells in design()) {
            let r = two_way_anova(&cells).unwrap();
            let parts = r.factor_a.ss + r.factor_b.ss + r.interaction.ss + r.ss_error;
            proptest::prop_assert!((parts - r.ss_total).abs() <= 1e-9 * r.ss_total.max(1e-300));
            for e in [r.factor_a, r.factor_b, r.interaction] {
                proptest::prop_assert!(e.f >= 0.0 && (0.0..=1.0).contains(&e.p));
            }
        }

        #[test]
        fn f_invariant_to_shift_and_scale(cells in design(), shift in -1e3f64..1e3, scale in 0.01f64..100.0) {
            let r = two_way_anova(&cells).unwrap();
            let moved: Vec<Vec<Vec<f64>>> = cells
                .iter()
                .map(|row| row.iter().map(|c| c.iter().map(|v| v * scale + shift).collect()).collect())
                .collect();
            let m = two_way_anova(&moved).unwrap();
            for (x, y) in [(r.factor_a, m.factor_a), (r.factor_b, m.factor_b), (r.interaction, m.interaction)] {
                proptest::prop_assert!((x.f - y.f).abs() <= 1e-6 * x.f.max(1.0), "{} vs {}", x.f, y.f);
            }
        }
    }
}
