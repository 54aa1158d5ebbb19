//! Windowed statistics (mean, variance, OLS slope) over dense
//! trajectories.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStat {
    Mean,
    Variance,
    Slope,
}

impl WindowStat {
    pub fn as_str(&self) -> &'static str {
        match self {
            WindowStat::Mean => "mean",
            WindowStat::Variance => "var",
            WindowStat::Slope => "slope",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_length: usize,
    pub stride: usize,
    pub statistics: Vec<WindowStat>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_length: 28,
            stride: 28,
            statistics: vec![WindowStat::Mean, WindowStat::Variance, WindowStat::Slope],
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.stride == 0 {
            return Err("stride must be >= 1".into());
        }
        if self.statistics.contains(&WindowStat::Slope) && self.window_length < 2 {
            return Err("window_length must be >= 2 for slope".into());
        }
        if self.window_length == 0 {
            return Err("window_length must be >= 1".into());
        }
        Ok(())
    }

    pub fn n_windows(&self, trajectory_len: usize) -> usize {
        if self.window_length >= trajectory_len {
            1
        } else {
            (trajectory_len - self.window_length) / self.stride + 1
        }
    }
}

fn window_stats(days: &[f64], values: &[f64], stat: WindowStat) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    match stat {
        WindowStat::Mean => mean,
        WindowStat::Variance => values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
        WindowStat::Slope => {
            let dm = days.iter().sum::<f64>() / n;
            let sxx: f64 = days.iter().map(|d| (d - dm).powi(2)).sum();
            let sxy: f64 = days
                .iter()
                .zip(values)
                .map(|(d, v)| (d - dm) * (v - mean))
                .sum();
            if sxx > 0.0 {
                sxy / sxx
            } else {
                0.0
            }
        }
    }
}

/// Per-window statistics over a dense trajectory (one value per day,
/// starting at day 0). Names encode (prefix, window index, statistic).
/// A window longer than the trajectory collapses to one full-length
/// window with a warning.
pub fn windowed_features(
    trajectory: &[f64],
    spec: &WindowSpec,
    name_prefix: &str,
) -> Vec<(String, f64)> {
    let len = trajectory.len();
    let mut out = Vec::new();
    if spec.window_length >= len {
        if spec.window_length > len {
            log::warn!(
                "window length {} exceeds trajectory length {len}; using one full window",
                spec.window_length
            );
        }
        let days: Vec<f64> = (0..len).map(|d| d as f64).collect();
        for stat in &spec.statistics {
            out.push((
                format!("{name_prefix}_w0_{}", stat.as_str()),
                window_stats(&days, trajectory, *stat),
            ));
        }
        return out;
    }
    for w in 0..spec.n_windows(len) {
        let start = w * spec.stride;
        let end = start + spec.window_length;
        let days: Vec<f64> = (start..end).map(|d| d as f64).collect();
        for stat in &spec.statistics {
            out.push((
                format!("{name_prefix}_w{w}_{}", stat.as_str()),
                window_stats(&days, &trajectory[start..end], *stat),
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(len: usize, stride: usize) -> WindowSpec {
        WindowSpec {
            window_length: len,
            stride,
            statistics: vec![WindowStat::Mean, WindowStat::Variance, WindowStat::Slope],
        }
    }

    #[test]
    fn constant_trajectory_zero_variance_and_slope() {
        let traj = vec![3.5; 85];
        let feats = windowed_features(&traj, &spec(28, 28), "c");
        for (name, v) in feats {
            if name.ends_with("_var") || name.ends_with("_slope") {
                assert_eq!(v, 0.0, "{name}");
            } else {
                assert_relative_eq!(v, 3.5);
            }
        }
    }

    #[test]
    fn identity_line_slope_one_and_day_variance() {
        let traj: Vec<f64> = (0..85).map(|d| d as f64).collect();
        let s = spec(28, 28);
        let feats = windowed_features(&traj, &s, "c");
        // Population variance of 28 consecutive integers.
        let days: Vec<f64> = (0..28).map(|d| d as f64).collect();
        let dm = days.iter().sum::<f64>() / 28.0;
        let day_var = days.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / 28.0;
        for (name, v) in feats {
            if name.ends_with("_slope") {
                assert_relative_eq!(v, 1.0, epsilon = 1e-12);
            } else if name.ends_with("_var") {
                assert_relative_eq!(v, day_var, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn window_count_and_independent_recomputation() {
        let traj: Vec<f64> = (0..85).map(|d| ((d * 37 % 11) as f64).sin()).collect();
        let s = spec(28, 28);
        let feats = windowed_features(&traj, &s, "c");
        assert_eq!(feats.len(), 3 * s.statistics.len());
        // Direct recomputation of window 1 mean.
        let w1 = &traj[28..56];
        let mean = w1.iter().sum::<f64>() / 28.0;
        let got = feats
            .iter()
            .find(|(n, _)| n == "c_w1_mean")
            .map(|(_, v)| *v)
            .unwrap();
        assert_relative_eq!(got, mean, epsilon = 1e-12);
    }

    #[test]
    fn n_windows_formula() {
        let s = spec(28, 28);
        assert_eq!(s.n_windows(85), (85 - 28) / 28 + 1);
        let s = spec(14, 7);
        assert_eq!(s.n_windows(85), (85 - 14) / 7 + 1);
    }

    #[test]
    fn oversized_window_collapses_to_one() {
        let traj = vec![1.0; 10];
        let feats = windowed_features(&traj, &spec(20, 5), "c");
        assert_eq!(feats.len(), 3);
        assert!(feats[0].0.starts_with("c_w0_"));
    }
}
