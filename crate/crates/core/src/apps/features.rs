//! Windowed feature rows: 8 counter deltas plus five statistics of every
//! selected signal over the reservoir samples that fall in the window.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::ml::Matrix;
use crate::reservoir::Sample;
use crate::store::{Counter, ObservationFrame, Signal};

use super::AppError;

pub const STATS: [&str; 5] = ["mean", "std", "p50", "p90", "ewm"];

/// Full-width row: 8 counters + 13 signals x 5 statistics.
pub const FULL_WIDTH: usize = Counter::COUNT + Signal::COUNT * STATS.len();

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowKey {
    pub egress: u8,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub x: Matrix,
    pub col_names: Vec<String>,
    pub keys: Vec<RowKey>,
    /// Bit `j` of `valid[r]` is set when the `j`-th selected signal had at
    /// least one sample in row `r`'s window.
    pub valid: Vec<u32>,
    pub signals: Vec<Signal>,
}

pub fn column_names(signals: &[Signal]) -> Vec<String> {
    let mut names: Vec<String> = Counter::ALL.iter().map(|c| c.name().to_string()).collect();
    for s in signals {
        for stat in STATS {
            names.push(format!("{}_{stat}", s.name()));
        }
    }
    names
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mean of `samples` weighted by `exp(-(now - ts) / tau)`.
pub fn exp_decay_mean(samples: &[Sample], now: f64, tau: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let w = (-(now - f64::from(s.ts)).max(0.0) / tau).exp();
        num += w * f64::from(s.value);
        den += w;
    }
    (den > 0.0).then(|| num / den)
}

/// `[mean, std, p50, p90, ewm]`; all zero and `false` without samples.
pub fn window_stats(samples: &[Sample], t_end: f64, tau: f64) -> ([f64; 5], bool) {
    if samples.is_empty() {
        return ([0.0; 5], false);
    }
    let mut v: Vec<f64> = samples.iter().map(|s| f64::from(s.value)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let ewm = exp_decay_mean(samples, t_end, tau).unwrap_or(mean);
    (
        [mean, var.sqrt(), quantile(&v, 0.5), quantile(&v, 0.9), ewm],
        true,
    )
}

/// Non-empty samples of `frame`'s reservoir for `signal` with
/// `t_start <= ts < t_end`.
pub fn samples_in(frame: &ObservationFrame, signal: Signal, t_start: f64, t_end: f64) -> Vec<Sample> {
    let (lo, hi) = (t_start as f32, t_end as f32);
    frame
        .samples
        .get(signal.id())
        .map(|slots| {
            slots
                .iter()
                .copied()
                .filter(|s| !s.is_empty() && s.ts >= lo && s.ts < hi)
                .collect()
        })
        .unwrap_or_default()
}

/// Turns per-egress frame sequences into one row per (egress, window).
///
/// Frames of one egress must have non-decreasing `frame_ts`; consecutive
/// frames bound a window, so the first frame of each egress is a baseline
/// and yields no row. Rows are ordered by window end, then egress. `window`
/// is the decay time constant of the `ewm` statistic.
pub fn build_feature_rows(
    frames: &[ObservationFrame],
    window: f64,
    signals: &[Signal],
) -> Result<FeatureMatrix, AppError> {
    if !(window > 0.0) {
        return Err(AppError::Config(format!("window must be > 0, got {window}")));
    }
    let mut per_egress: BTreeMap<u8, Vec<&ObservationFrame>> = BTreeMap::new();
    for f in frames {
        let seq = per_egress.entry(f.egress_id).or_default();
        if let Some(prev) = seq.last() {
            if f.frame_ts < prev.frame_ts {
                return Err(AppError::Unordered(format!(
                    "egress {} frame at {} after {}",
                    f.egress_id, f.frame_ts, prev.frame_ts
                )));
            }
        }
        seq.push(f);
    }

    let mut rows: Vec<(RowKey, Vec<f64>, u32)> = Vec::new();
    for (&egress, seq) in &per_egress {
        for pair in seq.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            let (t_start, t_end) = (prev.frame_ts, cur.frame_ts);
            let mut row = Vec::with_capacity(Counter::COUNT + 5 * signals.len());
            for c in 0..Counter::COUNT {
                let now = cur.counters.get(c).copied().unwrap_or(0);
                let before = prev.counters.get(c).copied().unwrap_or(0);
                row.push(f64::from(now.wrapping_sub(before) as i32));
            }
            let mut mask = 0u32;
            for (j, &s) in signals.iter().enumerate() {
                let (stats, ok) = window_stats(&samples_in(cur, s, t_start, t_end), t_end, window);
                row.extend_from_slice(&stats);
                if ok {
                    mask |= 1 << j;
                }
            }
            rows.push((RowKey { egress, t_start, t_end }, row, mask));
        }
    }
    rows.sort_by(|a, b| a.0.t_end.total_cmp(&b.0.t_end).then(a.0.egress.cmp(&b.0.egress)));

    let cols = Counter::COUNT + STATS.len() * signals.len();
    let mut data = Vec::with_capacity(rows.len() * cols);
    let mut keys = Vec::with_capacity(rows.len());
    let mut valid = Vec::with_capacity(rows.len());
    for (k, r, m) in rows {
        keys.push(k);
        data.extend(r);
        valid.push(m);
    }
    Ok(FeatureMatrix {
        x: Matrix::from_vec(keys.len(), cols, data)?,
        col_names: column_names(signals),
        keys,
        valid,
        signals: signals.to_vec(),
    })
}

const KEY_COLS: [&str; 4] = ["egress", "t_start", "t_end", "valid_mask"];

impl FeatureMatrix {
    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix, AppError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.col_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| AppError::Config(format!("unknown feature column {n:?}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(FeatureMatrix {
            x: self.x.select_cols(&idx),
            col_names: names.to_vec(),
            ..self.clone()
        })
    }

    /// CSV with header `egress,t_start,t_end,valid_mask,<features>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AppError> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = KEY_COLS
            .iter()
            .copied()
            .chain(self.col_names.iter().map(String::as_str))
            .collect();
        w.write_record(&header)?;
        for (i, k) in self.keys.iter().enumerate() {
            let mut rec = vec![
                k.egress.to_string(),
                k.t_start.to_string(),
                k.t_end.to_string(),
                self.valid[i].to_string(),
            ];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureMatrix, AppError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < KEY_COLS.len()
            || header.iter().take(KEY_COLS.len()).ne(KEY_COLS.iter().copied())
        {
            return Err(AppError::Parse(format!(
                "feature CSV must start with {}",
                KEY_COLS.join(",")
            )));
        }
        let col_names: Vec<String> = header.iter().skip(KEY_COLS.len()).map(String::from).collect();
        let mut data = Vec::new();
        let mut keys = Vec::new();
        let mut valid = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| AppError::Parse(format!("row {}: bad {what}", line + 2));
            if rec.len() != header.len() {
                return Err(bad("field count"));
            }
            keys.push(RowKey {
                egress: rec[0].parse().map_err(|_| bad("egress"))?,
                t_start: rec[1].parse().map_err(|_| bad("t_start"))?,
                t_end: rec[2].parse().map_err(|_| bad("t_end"))?,
            });
            valid.push(rec[3].parse().map_err(|_| bad("valid_mask"))?);
            for f in rec.iter().skip(KEY_COLS.len()) {
                data.push(f.parse::<f64>().map_err(|_| bad("value"))?);
            }
        }
        let signals = Signal::ALL
            .iter()
            .copied()
            .filter(|s| col_names.iter().any(|c| *c == format!("{}_mean", s.name())))
            .collect();
        Ok(FeatureMatrix {
            x: Matrix::from_vec(keys.len(), col_names.len(), data)?,
            col_names,
            keys,
            valid,
            signals,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(egress: u8, ts: f64, counters: [u32; 8], samples: &[(Signal, f32, f32)]) -> ObservationFrame {
        let mut s = vec![vec![Sample::default(); 4]; Signal::COUNT];
        for (i, &(sig, t, v)) in samples.iter().enumerate() {
            s[sig.id()][i % 4] = Sample::new(t, v);
        }
        ObservationFrame {
            egress_id: egress,
            seq: 1,
            counters: counters.to_vec(),
            samples: s,
            frame_ts: ts,
        }
    }

    #[test]
    fn full_width_is_73() {
        assert_eq!(FULL_WIDTH, 73);
        assert_eq!(column_names(&Signal::ALL).len(), 73);
        assert_eq!(column_names(&Signal::ALL)[8], "flow_duration_mean");
    }

    #[test]
    fn quiet_window_is_zero() {
        let frames = [frame(0, 0.0, [0; 8], &[]), frame(0, 1.0, [0; 8], &[])];
        let m = build_feature_rows(&frames, 1.0, &Signal::ALL).unwrap();
        assert_eq!(m.x.nrows(), 1);
        assert!(m.x.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(m.valid[0], 0);
    }

    #[test]
    fn single_duration_sample() {
        let frames = [
            frame(0, 0.0, [0; 8], &[]),
            frame(0, 2.0, [0, 1, 4, 0, 1, 1, 0, 0], &[(Signal::FlowDuration, 1.5, 1.0)]),
        ];
        let m = build_feature_rows(&frames, 2.0, &[Signal::FlowDuration]).unwrap();
        assert_eq!(m.x.ncols(), 13);
        let r = m.x.row(0);
        assert_eq!(&r[8..13], &[1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r[Counter::Packet.id()], 4.0);
        assert_eq!(m.valid[0], 1);
    }

    #[test]
    fn two_sample_window_by_hand() {
        // values 1 and 3 at ts 0.5 and 1.0, window [0, 1.5), tau 1:
        // mean 2, pop std 1, p50 2, p90 1 + 0.9 * 2 = 2.8,
        // ewm weights e^-1, e^-0.5 -> (e^-1 + 3 e^-0.5) / (e^-1 + e^-0.5)
        let frames = [
            frame(3, 0.0, [0; 8], &[]),
            frame(3, 1.5, [0; 8], &[(Signal::AckGap, 0.5, 1.0), (Signal::AckGap, 1.0, 3.0)]),
        ];
        let m = build_feature_rows(&frames, 1.0, &[Signal::AckGap]).unwrap();
        let r = &m.x.row(0)[8..];
        let (a, b) = ((-1.0f64).exp(), (-0.5f64).exp());
        let want = [2.0, 1.0, 2.0, 2.8, (a + 3.0 * b) / (a + b)];
        for (x, y) in r.iter().zip(want) {
            assert!((x - y).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn samples_outside_window_ignored() {
        let frames = [
            frame(0, 1.0, [0; 8], &[]),
            frame(0, 2.0, [0; 8], &[(Signal::SynGap, 0.5, 9.0), (Signal::SynGap, 2.0, 9.0)]),
        ];
        let m = build_feature_rows(&frames, 1.0, &[Signal::SynGap]).unwrap();
        assert_eq!(m.valid[0], 0);
    }

    #[test]
    fn counter_decrease_is_negative() {
        let mut a = [0u32; 8];
        a[0] = 5;
        let mut b = a;
        b[0] = 2;
        let m = build_feature_rows(&[frame(0, 0.0, a, &[]), frame(0, 1.0, b, &[])], 1.0, &[]).unwrap();
        assert_eq!(m.x.get(0, 0), -3.0);
    }

    #[test]
    fn unordered_frames_rejected() {
        let frames = [frame(0, 2.0, [0; 8], &[]), frame(0, 1.0, [0; 8], &[])];
        assert!(matches!(
            build_feature_rows(&frames, 1.0, &Signal::ALL),
            Err(AppError::Unordered(_))
        ));
    }

    #[test]
    fn rows_sorted_by_time_then_egress() {
        let frames = [
            frame(1, 0.0, [0; 8], &[]),
            frame(1, 1.0, [0; 8], &[]),
            frame(1, 2.0, [0; 8], &[]),
            frame(0, 0.0, [0; 8], &[]),
            frame(0, 1.0, [0; 8], &[]),
        ];
        let m = build_feature_rows(&frames, 1.0, &[]).unwrap();
        let keys: Vec<(u8, f64)> = m.keys.iter().map(|k| (k.egress, k.t_end)).collect();
        assert_eq!(keys, vec![(0, 1.0), (1, 1.0), (1, 2.0)]);
    }

    #[test]
    fn csv_round_trip() {
        let frames = [
            frame(2, 0.0, [0; 8], &[]),
            frame(2, 1.0, [1, 2, 3, 4, 5, 6, 7, 8], &[(Signal::WinSize, 0.25, 1000.0)]),
        ];
        let m = build_feature_rows(&frames, 1.0, &Signal::ALL).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = FeatureMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let sel = m.select(&["n_byte".to_string()]).unwrap();
        assert_eq!(sel.x.data(), &[4.0]);
    }
}
