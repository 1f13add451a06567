//! Sample statistics over 2D position estimates.

use thiserror::Error;

use uwbfuse_core::solve::Covariance2;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
}

pub fn mean(points: &[(f64, f64)]) -> Result<(f64, f64), StatsError> {
    if points.is_empty() {
        return Err(StatsError::TooFewPoints { need: 1, got: 0 });
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x, sy + y));
    Ok((sx / n, sy / n))
}

/// Sample covariance with n-1 normalization.
pub fn covariance(points: &[(f64, f64)]) -> Result<Covariance2, StatsError> {
    if points.len() < 2 {
        return Err(StatsError::TooFewPoints {
            need: 2,
            got: points.len(),
        });
    }
    let (mx, my) = mean(points)?;
    let mut xx = 0.0;
    let mut xy = 0.0;
    let mut yy = 0.0;
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let norm = (points.len() - 1) as f64;
    Ok(Covariance2 {
        xx: xx / norm,
        xy: xy / norm,
        yy: yy / norm,
    })
}

/// Per-axis standard deviation: square roots of the covariance diagonal.
pub fn precision_stddev(points: &[(f64, f64)]) -> Result<(f64, f64), StatsError> {
    let cov = covariance(points)?;
    Ok((cov.xx.sqrt(), cov.yy.sqrt()))
}

/// Per-axis absolute difference between the two point sets' means.
pub fn compare_modes(
    toa_points: &[(f64, f64)],
    fused_points: &[(f64, f64)],
) -> Result<(f64, f64), StatsError> {
    let a = mean(toa_points)?;
    let b = mean(fused_points)?;
    Ok(((a.0 - b.0).abs(), (a.1 - b.1).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_have_zero_spread() {
        let points = vec![(1.0, 2.0); 5];
        let cov = covariance(&points).unwrap();
        assert_eq!((cov.xx, cov.xy, cov.yy), (0.0, 0.0, 0.0));
        assert_eq!(precision_stddev(&points).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn two_point_hand_arithmetic() {
        let points = [(0.0, 0.0), (2.0, 0.0)];
        let cov = covariance(&points).unwrap();
        assert_eq!(cov.xx, 2.0);
        assert_eq!(cov.xy, 0.0);
        assert_eq!(cov.yy, 0.0);
        let (sx, sy) = precision_stddev(&points).unwrap();
        assert!((sx - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(sy, 0.0);
    }

    #[test]
    fn unit_circle_four_point_set() {
        // {(+-1,0),(0,+-1)}: mean (0,0), sum of squares 2 per axis, /3.
        let points = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
        let cov = covariance(&points).unwrap();
        assert!((cov.xx - 2.0 / 3.0).abs() < 1e-15);
        assert!((cov.yy - 2.0 / 3.0).abs() < 1e-15);
        assert!(cov.xy.abs() < 1e-15);
    }

    #[test]
    fn stddev_is_the_root_of_the_diagonal() {
        let points = [(0.3, -1.0), (1.7, 0.4), (-0.2, 2.2), (0.9, 0.1)];
        let cov = covariance(&points).unwrap();
        let (sx, sy) = precision_stddev(&points).unwrap();
        assert!((sx * sx - cov.xx).abs() < 1e-12);
        assert!((sy * sy - cov.yy).abs() < 1e-12);
    }

    #[test]
    fn mode_comparison_is_the_mean_gap() {
        let a = [(0.0, 0.0), (2.0, 2.0)];
        assert_eq!(compare_modes(&a, &a).unwrap(), (0.0, 0.0));
        let b = [(1.0, 0.5), (3.0, 2.5)];
        let (dx, dy) = compare_modes(&a, &b).unwrap();
        assert!((dx - 1.0).abs() < 1e-15);
        assert!((dy - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(mean(&[]).is_err());
        assert!(covariance(&[(1.0, 1.0)]).is_err());
        assert!(compare_modes(&[], &[(0.0, 0.0)]).is_err());
    }
}
