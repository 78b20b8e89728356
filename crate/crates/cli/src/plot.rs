//! Density curves and histogram counts in CSV form.

use anyhow::{bail, Result};
use mscs_core::{MixtureParams, Sample};

/// Named density curve.
pub struct Curve {
    pub k: usize,
    pub params: MixtureParams,
}

pub fn grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        bail!("grid needs at least 2 points, got {points}");
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        bail!("invalid grid range [{lo}, {hi}]");
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i == points - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

/// Range spanned by a scenario: extreme component means widened by five of
/// the largest component SDs.
pub fn scenario_range(p: &MixtureParams) -> (f64, f64) {
    let pad = 5.0 * p.max_sd();
    (p.means()[0] - pad, p.means()[p.k() - 1] + pad)
}

pub fn curves_csv(xs: &[f64], curves: &[Curve]) -> String {
    let mut out = String::from("x");
    for c in curves {
        out.push_str(&format!(",density_k{}", c.k));
    }
    out.push('\n');
    for &x in xs {
        out.push_str(&format!("{x:?}"));
        for c in curves {
            out.push_str(&format!(",{:?}", c.params.density(x)));
        }
        out.push('\n');
    }
    out
}

/// Equal-width histogram over the data range with Sturges' bin count unless
/// `bins` is given.
pub fn histogram_csv(sample: &Sample, bins: Option<usize>) -> Result<String> {
    let n = sample.len();
    let bins = bins.unwrap_or_else(|| ((n as f64).log2().ceil() as usize + 1).max(1));
    if bins == 0 {
        bail!("bin count must be positive");
    }
    let (lo, hi) = (sample.min(), sample.max());
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &x in sample.values() {
        let b = (((x - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count,density\n");
    for (i, c) in counts.iter().enumerate() {
        let a = lo + width * i as f64;
        let b = lo + width * (i + 1) as f64;
        out.push_str(&format!("{a:?},{b:?},{c},{:?}\n", *c as f64 / (n as f64 * width)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_are_exact() {
        let g = grid(-1.0, 2.0, 7).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], -1.0);
        assert_eq!(g[6], 2.0);
        assert!(grid(0.0, 1.0, 1).is_err());
        assert!(grid(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn scenario_curve_integrates_to_one() {
        let p = mscs_core::sim::scenario_params(1).unwrap().true_params;
        let (lo, hi) = scenario_range(&p);
        let xs = grid(lo, hi, 512).unwrap();
        let ys: Vec<f64> = xs.iter().map(|&x| p.density(x)).collect();
        let area: f64 = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum();
        assert!((area - 1.0).abs() < 1e-3, "{area}");
    }

    #[test]
    fn histogram_counts_every_point() {
        let s = Sample::new(vec![0.0, 0.1, 0.5, 0.9, 1.0]).unwrap();
        let csv = histogram_csv(&s, Some(2)).unwrap();
        let counts: Vec<usize> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(counts, vec![2, 3]);
    }
}
