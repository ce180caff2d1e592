use super::SpectrumFrame;
use crate::error::{invalid, Result};

fn median_of(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = buf[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Centered moving median with shrinking windows at the edges (no padding).
pub fn movmedian(values: &[f64], window_len: usize) -> Result<Vec<f64>> {
    if window_len % 2 == 0 {
        return invalid(format!("moving-median window must be odd, got {window_len}"));
    }
    if window_len > values.len() {
        return invalid(format!(
            "moving-median window {window_len} exceeds {} bins",
            values.len()
        ));
    }
    let half = window_len / 2;
    let n = values.len();
    let mut buf = Vec::with_capacity(window_len);
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            median_of(&mut buf)
        })
        .collect())
}

/// Split a spectrum into its moving-median floor and the floor-relative
/// residual `power_db - floor`.
pub fn movmedian_smooth(frame: &SpectrumFrame, window_len: usize) -> Result<(SpectrumFrame, SpectrumFrame)> {
    let floor = movmedian(&frame.power_db, window_len)?;
    let detrended = frame.power_db.iter().zip(&floor).map(|(p, f)| p - f).collect();
    let with = |power_db| SpectrumFrame {
        freqs: frame.freqs.clone(),
        power_db,
        band_center_hz: frame.band_center_hz,
        fft_size: frame.fft_size,
    };
    Ok((with(floor), with(detrended)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(values: Vec<f64>) -> SpectrumFrame {
        let n = values.len();
        SpectrumFrame {
            freqs: SpectrumFrame::axis(0.0, n as f64, n),
            power_db: values,
            band_center_hz: 0.0,
            fft_size: n,
        }
    }

    #[test]
    fn constant_frame() {
        let (floor, det) = movmedian_smooth(&frame(vec![-42.0; 300]), 101).unwrap();
        assert!(floor.power_db.iter().all(|&d| d == -42.0));
        assert!(det.power_db.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_spike_survives() {
        let mut v = vec![-80.0; 1024];
        v[500] = -60.0;
        let (floor, det) = movmedian_smooth(&frame(v), 101).unwrap();
        assert!((det.power_db[500] - 20.0).abs() <= 0.5);
        assert!(floor.power_db.iter().all(|&d| (d + 80.0).abs() <= 0.1));
    }

    #[test]
    fn linear_tilt_removed_away_from_edges() {
        let n = 2048;
        let w = 101;
        let v: Vec<f64> = (0..n).map(|i| -70.0 + 5.0 * i as f64 / (n - 1) as f64).collect();
        let (_, det) = movmedian_smooth(&frame(v), w).unwrap();
        for (i, d) in det.power_db.iter().enumerate() {
            if i >= w / 2 && i < n - w / 2 {
                assert!(d.abs() <= 0.5, "bin {i}: {d}");
            }
        }
    }

    #[test]
    fn shrinking_edges() {
        let v = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        // bin 0 sees [1, 2] -> 1.5; bin 1 sees [1, 2, 3] -> 2
        assert_eq!(movmedian(&v, 3).unwrap(), vec![1.5, 2.0, 3.0, 4.0, 4.5]);
    }

    #[test]
    fn even_window_rejected() {
        assert!(movmedian_smooth(&frame(vec![0.0; 10]), 4).is_err());
        assert!(movmedian_smooth(&frame(vec![0.0; 10]), 11).is_err());
    }

    proptest! {
        #[test]
        fn narrow_spike_preserved(pos in 40usize..200, height in 3.0f64..40.0, width in 1usize..=7) {
            // width <= (movmedian_len - 1) / 2 survives the floor estimate
            let mut v = vec![-50.0; 256];
            for k in 0..width {
                v[pos + k] += height;
            }
            let (_, det) = movmedian_smooth(&frame(v), 15).unwrap();
            for k in 0..width {
                prop_assert!((det.power_db[pos + k] - height).abs() <= 0.5);
            }
        }
    }
}
