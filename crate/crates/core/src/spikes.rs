//! Threshold-crossing spike detection and fixed-length waveform extraction.

use serde::{Deserialize, Serialize};

use crate::dsp::Segment;
use crate::error::{PipelineError, Result};

/// Samples kept on each side of the peak.
pub const HALF_WINDOW: usize = 50;
/// Total waveform length.
pub const WAVEFORM_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Positive,
}

#[derive(Debug, Clone)]
pub struct SpikeEvent {
    pub channel: usize,
    /// Segment-local sample index of the peak.
    pub peak_index: usize,
    pub peak_time_s: f64,
    pub waveform: Vec<f32>,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub threshold_multiplier: f64,
    pub dead_time_s: f64,
    pub peak_search_window_s: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold_multiplier: 5.0,
            dead_time_s: 0.001,
            peak_search_window_s: 0.001,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_multiplier <= 0.0 {
            return Err(PipelineError::Config("threshold_multiplier must be > 0".into()));
        }
        if self.dead_time_s < 0.0 || self.peak_search_window_s < 0.0 {
            return Err(PipelineError::Config("negative time window".into()));
        }
        Ok(())
    }
}

/// Copy the 100-sample window centered on `peak_index` (50 before, 50 after,
/// peak at position 50). Rejects peaks too close to either edge.
pub fn extract_waveform(channel_samples: &[f32], peak_index: usize) -> Result<Vec<f32>> {
    if peak_index < HALF_WINDOW || peak_index + HALF_WINDOW + 1 > channel_samples.len() {
        return Err(PipelineError::Data(format!(
            "peak index {peak_index} too close to edge (len {})",
            channel_samples.len()
        )));
    }
    Ok(channel_samples[peak_index - HALF_WINDOW..peak_index + HALF_WINDOW].to_vec())
}

/// Two-sided threshold-crossing detection on one channel. Returns peak
/// indices only; edge peaks that cannot fit a full waveform are dropped.
fn detect_channel(x: &[f32], threshold: f64, dead_samples: usize, search_samples: usize) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut last_peak: Option<usize> = None;
    let mut t = 1;
    while t < x.len() {
        let prev = x[t - 1].abs() as f64;
        let cur = x[t].abs() as f64;
        let crossed = prev < threshold && cur >= threshold;
        if crossed {
            if let Some(lp) = last_peak {
                if t - lp <= dead_samples {
                    t += 1;
                    continue;
                }
            }
            let end = (t + search_samples + 1).min(x.len());
            let mut peak = t;
            let mut best = cur;
            for (i, &v) in x[t..end].iter().enumerate() {
                let a = v.abs() as f64;
                if a > best {
                    best = a;
                    peak = t + i;
                }
            }
            peaks.push(peak);
            last_peak = Some(peak);
            // Resume after the search window so one spike yields one event.
            t = end;
        } else {
            t += 1;
        }
    }
    peaks
}

/// Detect spikes on every channel of a segment and merge them into one list
/// sorted by peak time (ties broken by channel index).
pub fn detect_spikes(
    seg: &Segment,
    cfg: &DetectionConfig,
    sigma_per_channel: &[f64],
) -> Result<Vec<SpikeEvent>> {
    cfg.validate()?;
    if sigma_per_channel.len() != seg.samples.len() {
        return Err(PipelineError::Data(format!(
            "sigma list length {} != channel count {}",
            sigma_per_channel.len(),
            seg.samples.len()
        )));
    }
    let fs = seg.sampling_rate_hz;
    let dead = (cfg.dead_time_s * fs).round() as usize;
    let search = (cfg.peak_search_window_s * fs).round() as usize;

    let mut events = Vec::new();
    for (ch, x) in seg.samples.iter().enumerate() {
        let sigma = sigma_per_channel[ch];
        if sigma <= 0.0 {
            // All-zero (dead) channel: nothing to detect.
            continue;
        }
        let threshold = cfg.threshold_multiplier * sigma;
        for peak in detect_channel(x, threshold, dead, search) {
            let Ok(waveform) = extract_waveform(x, peak) else {
                continue;
            };
            let peak_v = waveform[HALF_WINDOW];
            events.push(SpikeEvent {
                channel: ch,
                peak_index: peak,
                peak_time_s: peak as f64 / fs,
                waveform,
                polarity: if peak_v < 0.0 {
                    Polarity::Negative
                } else {
                    Polarity::Positive
                },
            });
        }
    }
    events.sort_by(|a, b| {
        a.peak_time_s
            .partial_cmp(&b.peak_time_s)
            .unwrap()
            .then(a.channel.cmp(&b.channel))
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io_store::ClassLabel;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    const FS: f64 = 12500.0;

    fn seg_from(channels: Vec<Vec<f32>>) -> Segment {
        let n = channels[0].len();
        Segment {
            parent_id: "t".into(),
            well_id: "A1".into(),
            class_label: ClassLabel::ClassA,
            start_s: 0.0,
            window_s: n as f64 / FS,
            samples: channels,
            sampling_rate_hz: FS,
        }
    }

    /// Simple biphasic test template, peak at index 50.
    fn template(peak: f32) -> Vec<f32> {
        (0..WAVEFORM_LEN)
            .map(|i| {
                let t = (i as f64 - 50.0) / 5.0;
                let main = (-(t * t) / 2.0).exp();
                // Keep the rebound lobe well under threshold so one injected
                // spike cannot legitimately fire a second crossing.
                let rebound = 0.15 * (-((t - 2.0) * (t - 2.0)) / 8.0).exp();
                (peak as f64 * (main - rebound) / (1.0 - 0.15 * (-0.5f64).exp())) as f32
            })
            .collect()
    }

    fn inject(x: &mut [f32], template: &[f32], peak_at: usize) {
        for (i, &v) in template.iter().enumerate() {
            let idx = peak_at + i - HALF_WINDOW;
            x[idx] += v;
        }
    }

    #[test]
    fn all_zero_segment_empty() {
        let seg = seg_from(vec![vec![0.0; 20000]]);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[0.0]).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn single_injected_spike_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0f64, 20.0).unwrap();
        let n = (10.0 * FS) as usize;
        let mut x: Vec<f32> = (0..n).map(|_| rng.sample(normal) as f32).collect();
        inject(&mut x, &template(-200.0), (5.0 * FS) as usize);
        let seg = seg_from(vec![x]);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[20.0]).unwrap();
        assert_eq!(ev.len(), 1, "events: {:?}", ev.iter().map(|e| e.peak_time_s).collect::<Vec<_>>());
        assert!((ev[0].peak_time_s - 5.0).abs() <= 0.001);
        assert_eq!(ev[0].polarity, Polarity::Negative);
    }

    #[test]
    fn dead_time_suppresses_close_pair() {
        let n = (2.0 * FS) as usize;
        let mut x = vec![0.0f32; n];
        let tpl = template(-200.0);
        let first = (1.0 * FS) as usize;
        let gap = (0.0005 * FS).round() as usize; // 0.5 ms
        inject(&mut x, &tpl, first);
        inject(&mut x, &tpl, first + gap);
        let seg = seg_from(vec![x]);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[20.0]).unwrap();
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn waveform_extraction_impulse() {
        let mut x = vec![0.0f32; 500];
        x[100] = -150.0;
        let w = extract_waveform(&x, 100).unwrap();
        assert_eq!(w.len(), WAVEFORM_LEN);
        assert_eq!(w[HALF_WINDOW], -150.0);
        assert!(w.iter().enumerate().all(|(i, &v)| i == HALF_WINDOW || v == 0.0));
    }

    #[test]
    fn edge_peak_rejected() {
        let x = vec![0.0f32; 500];
        assert!(extract_waveform(&x, 49).is_err());
        assert!(extract_waveform(&x, 50).is_ok());
        assert!(extract_waveform(&x, 449).is_ok());
        assert!(extract_waveform(&x, 450).is_err());
    }

    #[test]
    fn extracted_waveform_correlates_with_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0f64, 20.0).unwrap();
        let n = (4.0 * FS) as usize;
        let mut x: Vec<f32> = (0..n).map(|_| rng.sample(normal) as f32).collect();
        let tpl = template(-300.0);
        inject(&mut x, &tpl, (2.0 * FS) as usize);
        let seg = seg_from(vec![x]);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[20.0]).unwrap();
        assert_eq!(ev.len(), 1);
        let w = &ev[0].waveform;
        let dot: f64 = w.iter().zip(&tpl).map(|(&a, &b)| a as f64 * b as f64).sum();
        let na: f64 = w.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = tpl.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
        assert!(dot / (na * nb) >= 0.9);
    }

    #[test]
    fn pure_noise_false_positive_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0f64, 20.0).unwrap();
        let n = (100.0 * FS) as usize;
        let x: Vec<f32> = (0..n).map(|_| rng.sample(normal) as f32).collect();
        let seg = seg_from(vec![x]);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[20.0]).unwrap();
        let rate = ev.len() as f64 / 100.0;
        assert!(rate < 0.1, "false positive rate {rate}/s");
    }

    #[test]
    fn output_sorted_and_dead_time_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0f64, 20.0).unwrap();
        let n = (20.0 * FS) as usize;
        let tpl = template(-250.0);
        let mut chans = Vec::new();
        for _ in 0..3 {
            let mut x: Vec<f32> = (0..n).map(|_| rng.sample(normal) as f32).collect();
            for k in 1..40 {
                inject(&mut x, &tpl, (k as f64 * 0.47 * FS) as usize);
            }
            chans.push(x);
        }
        let seg = seg_from(chans);
        let ev = detect_spikes(&seg, &DetectionConfig::default(), &[20.0, 20.0, 20.0]).unwrap();
        for pair in ev.windows(2) {
            assert!(pair[0].peak_time_s <= pair[1].peak_time_s);
        }
        let mut per_chan: std::collections::HashMap<usize, Vec<f64>> = Default::default();
        for e in &ev {
            per_chan.entry(e.channel).or_default().push(e.peak_time_s);
        }
        for times in per_chan.values() {
            for pair in times.windows(2) {
                assert!(pair[1] - pair[0] > 0.001);
            }
        }
    }
}
