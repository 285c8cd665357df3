use std::fmt;

use crate::output::TimeSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryClass {
    Settled,
    Oscillatory,
    Collapsed,
}

impl fmt::Display for TrajectoryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrajectoryClass::Settled => "SETTLED",
            TrajectoryClass::Oscillatory => "OSCILLATORY",
            TrajectoryClass::Collapsed => "COLLAPSED",
        };
        f.write_str(s)
    }
}

/// Classify a run: `COLLAPSED` when the integrator aborted, `SETTLED` when
/// the trailing-window peak-to-peak of every selected channel is below `tol`,
/// `OSCILLATORY` otherwise.
pub fn classify_trajectory(
    series: &TimeSeries,
    channels: &[String],
    collapsed: bool,
    tol: f64,
    window: f64,
) -> TrajectoryClass {
    if collapsed {
        return TrajectoryClass::Collapsed;
    }
    if series.is_empty() {
        return TrajectoryClass::Collapsed;
    }
    let t_end = *series.time.last().unwrap();
    let start = series.time.partition_point(|&t| t < t_end - window);
    let mut worst = 0.0f64;
    for name in channels {
        let Some(col) = series.channel(name) else {
            continue;
        };
        let w = &col[start..];
        if w.is_empty() {
            continue;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in w {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        worst = worst.max(hi - lo);
    }
    if worst < tol {
        TrajectoryClass::Settled
    } else {
        TrajectoryClass::Oscillatory
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_of(f: impl Fn(f64) -> f64, n: usize) -> TimeSeries {
        let mut s = TimeSeries::new(vec!["x".into()]);
        for k in 0..n {
            let t = k as f64 * 1e-2;
            s.push_row(t, &[f(t)]);
        }
        s
    }

    #[test]
    fn constant_is_settled() {
        let s = series_of(|_| 0.7, 1000);
        assert_eq!(
            classify_trajectory(&s, &["x".into()], false, 1e-4, 2.0),
            TrajectoryClass::Settled
        );
    }

    #[test]
    fn undamped_sine_is_oscillatory() {
        let s = series_of(|t| (3.0 * t).sin(), 1000);
        assert_eq!(
            classify_trajectory(&s, &["x".into()], false, 1e-4, 2.0),
            TrajectoryClass::Oscillatory
        );
    }

    #[test]
    fn collapse_flag_dominates() {
        let s = series_of(|_| 0.0, 10);
        assert_eq!(
            classify_trajectory(&s, &["x".into()], true, 1e-4, 2.0),
            TrajectoryClass::Collapsed
        );
    }

    #[test]
    fn decaying_transient_settles() {
        let s = series_of(|t| (-t).exp() * (20.0 * t).sin(), 2000);
        assert_eq!(
            classify_trajectory(&s, &["x".into()], false, 1e-4, 2.0),
            TrajectoryClass::Settled
        );
    }
}
