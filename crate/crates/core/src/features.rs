//! Handcrafted spike and burst features plus the recording-level mean firing
//! rate. These are the knowledge-augmentation content concatenated onto raw
//! waveforms downstream.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::spikes::{SpikeEvent, HALF_WINDOW};

/// Pre-spike region used for the baseline estimate.
const BASELINE_LEN: usize = 20;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpikeFeatures {
    pub amplitude_uv: f64,
    pub isi_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Burst {
    pub channel: usize,
    pub first_spike_idx: usize,
    pub n_spikes: usize,
    pub duration_s: f64,
    /// Burst duration divided by spike count.
    pub bsr: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BurstConfig {
    pub min_isi_s: f64,
    pub min_spikes: usize,
    /// When set, bsr is reported as n_spikes / duration instead of the
    /// default duration / n_spikes. For sensitivity runs only.
    #[serde(default)]
    pub bsr_inverse: bool,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig {
            min_isi_s: 0.008,
            min_spikes: 4,
            bsr_inverse: false,
        }
    }
}

impl BurstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_isi_s <= 0.0 {
            return Err(PipelineError::Config("min_isi_s must be > 0".into()));
        }
        if self.min_spikes < 2 {
            return Err(PipelineError::Config("min_spikes must be >= 2".into()));
        }
        Ok(())
    }
}

/// Median of the pre-spike samples; the least spike-contaminated estimate of
/// the local baseline.
fn baseline(waveform: &[f32]) -> f64 {
    let mut pre: Vec<f64> = waveform[..BASELINE_LEN].iter().map(|&v| v as f64).collect();
    pre.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pre.len();
    if n % 2 == 1 {
        pre[n / 2]
    } else {
        (pre[n / 2 - 1] + pre[n / 2]) / 2.0
    }
}

/// Peak deflection relative to the pre-spike baseline.
pub fn spike_amplitude(waveform: &[f32]) -> f64 {
    (waveform[HALF_WINDOW] as f64 - baseline(waveform)).abs()
}

/// Width at half amplitude, with linear interpolation between samples. If a
/// side never drops below half amplitude inside the window, it clamps to the
/// window edge.
pub fn spike_duration(waveform: &[f32], sampling_rate_hz: f64) -> f64 {
    let base = baseline(waveform);
    let peak_dev = (waveform[HALF_WINDOW] as f64 - base).abs();
    if peak_dev == 0.0 {
        return 0.0;
    }
    let v_half = 0.5 * peak_dev;
    let dev = |i: usize| (waveform[i] as f64 - base).abs();

    // Walk left from the peak to the last sample below half amplitude.
    let mut t_left = 0.0;
    let mut found_left = false;
    for i in (0..HALF_WINDOW).rev() {
        if dev(i) < v_half {
            let d0 = dev(i);
            let d1 = dev(i + 1);
            let frac = if d1 > d0 { (v_half - d0) / (d1 - d0) } else { 0.0 };
            t_left = i as f64 + frac;
            found_left = true;
            break;
        }
    }
    if !found_left {
        t_left = 0.0;
    }

    let mut t_right = (waveform.len() - 1) as f64;
    let mut found_right = false;
    for i in HALF_WINDOW + 1..waveform.len() {
        if dev(i) < v_half {
            let d0 = dev(i);
            let d1 = dev(i - 1);
            let frac = if d1 > d0 { (v_half - d0) / (d1 - d0) } else { 0.0 };
            t_right = i as f64 - frac;
            found_right = true;
            break;
        }
    }
    if !found_right {
        t_right = (waveform.len() - 1) as f64;
    }

    (t_right - t_left) / sampling_rate_hz
}

/// Per-event ISI to the next spike on the same channel; the last spike on a
/// channel gets the time remaining to the segment end.
pub fn inter_spike_intervals(events: &[SpikeEvent], segment_end_s: f64) -> Vec<f64> {
    let mut isis = vec![0.0; events.len()];
    let mut next_time: std::collections::HashMap<usize, f64> = Default::default();
    for (i, e) in events.iter().enumerate().rev() {
        match next_time.get(&e.channel) {
            Some(&t_next) => isis[i] = t_next - e.peak_time_s,
            None => isis[i] = segment_end_s - e.peak_time_s,
        }
        next_time.insert(e.channel, e.peak_time_s);
    }
    isis
}

/// Per-channel maximal runs of consecutive spikes with all successive ISIs
/// below `min_isi_s`; a run qualifies as a burst when it reaches
/// `min_spikes`.
pub fn detect_bursts(events: &[SpikeEvent], cfg: &BurstConfig) -> Result<Vec<Burst>> {
    cfg.validate()?;
    let mut per_channel: std::collections::BTreeMap<usize, Vec<(usize, f64)>> = Default::default();
    for (i, e) in events.iter().enumerate() {
        per_channel.entry(e.channel).or_default().push((i, e.peak_time_s));
    }

    let mut bursts = Vec::new();
    for (channel, spikes) in per_channel {
        let mut run_start = 0;
        let close_run = |start: usize, end: usize, bursts: &mut Vec<Burst>| {
            let n = end - start;
            if n >= cfg.min_spikes {
                let duration = spikes[end - 1].1 - spikes[start].1;
                let bsr = if cfg.bsr_inverse {
                    n as f64 / duration
                } else {
                    duration / n as f64
                };
                bursts.push(Burst {
                    channel,
                    first_spike_idx: spikes[start].0,
                    n_spikes: n,
                    duration_s: duration,
                    bsr,
                });
            }
        };
        for i in 1..spikes.len() {
            if spikes[i].1 - spikes[i - 1].1 >= cfg.min_isi_s {
                close_run(run_start, i, &mut bursts);
                run_start = i;
            }
        }
        close_run(run_start, spikes.len(), &mut bursts);
    }
    Ok(bursts)
}

/// Mean firing rate: total spikes over (electrode count x duration), Hz per
/// electrode.
pub fn mean_firing_rate(spike_counts: &[usize], duration_s: f64) -> Result<f64> {
    if duration_s <= 0.0 {
        return Err(PipelineError::Data("zero duration".into()));
    }
    if spike_counts.is_empty() {
        return Err(PipelineError::Data("no electrodes".into()));
    }
    let total: usize = spike_counts.iter().sum();
    Ok(total as f64 / (spike_counts.len() as f64 * duration_s))
}

/// Convenience: amplitude, ISI, and duration for every event in a segment.
pub fn spike_features(
    events: &[SpikeEvent],
    segment_end_s: f64,
    sampling_rate_hz: f64,
) -> Vec<SpikeFeatures> {
    let isis = inter_spike_intervals(events, segment_end_s);
    events
        .iter()
        .zip(isis)
        .map(|(e, isi_s)| SpikeFeatures {
            amplitude_uv: spike_amplitude(&e.waveform),
            isi_s,
            duration_s: spike_duration(&e.waveform, sampling_rate_hz),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spikes::Polarity;

    fn event(channel: usize, t: f64) -> SpikeEvent {
        SpikeEvent {
            channel,
            peak_index: (t * 12500.0) as usize,
            peak_time_s: t,
            waveform: vec![0.0; 100],
            polarity: Polarity::Negative,
        }
    }

    #[test]
    fn amplitude_impulse() {
        let mut w = vec![0.0f32; 100];
        w[50] = -150.0;
        assert_eq!(spike_amplitude(&w), 150.0);
    }

    #[test]
    fn amplitude_subtracts_baseline() {
        let mut w = vec![-50.0f32; 100];
        w[50] = -150.0;
        assert_eq!(spike_amplitude(&w), 100.0);
    }

    #[test]
    fn amplitude_offset_invariant() {
        let mut w = vec![0.0f32; 100];
        for (i, v) in w.iter_mut().enumerate() {
            let t = (i as f64 - 50.0) / 4.0;
            *v = (-120.0 * (-(t * t) / 2.0).exp()) as f32;
        }
        let a0 = spike_amplitude(&w);
        let shifted: Vec<f32> = w.iter().map(|&v| v + 37.5).collect();
        assert!((spike_amplitude(&shifted) - a0).abs() < 1e-4);
    }

    #[test]
    fn duration_triangle() {
        // Rise over 10 samples, fall over 10: half-crossings 5 samples out
        // on each side, width exactly 10 samples.
        let mut w = vec![0.0f32; 100];
        for i in 0..=10 {
            w[50 - 10 + i] = -(i as f32) * 10.0;
            w[50 + 10 - i] = -(i as f32) * 10.0;
        }
        let d = spike_duration(&w, 12500.0);
        assert!((d - 10.0 / 12500.0).abs() < 1e-9, "duration {d}");
    }

    #[test]
    fn duration_rectangle() {
        let mut w = vec![0.0f32; 100];
        for i in 48..52 {
            w[i] = -100.0;
        }
        let d = spike_duration(&w, 12500.0);
        let expect = 4.0 / 12500.0;
        assert!((d - expect).abs() <= 1.0 / 12500.0, "duration {d}");
    }

    #[test]
    fn duration_flat_zero() {
        let w = vec![0.0f32; 100];
        assert_eq!(spike_duration(&w, 12500.0), 0.0);
    }

    #[test]
    fn duration_scale_invariant() {
        let mut w = vec![0.0f32; 100];
        for i in 0..100 {
            let t = (i as f64 - 50.0) / 6.0;
            w[i] = (-200.0 * (-t * t / 2.0).exp()) as f32;
        }
        let d1 = spike_duration(&w, 12500.0);
        let scaled: Vec<f32> = w.iter().map(|&v| v * 3.0).collect();
        let d2 = spike_duration(&scaled, 12500.0);
        assert!((d1 - d2).abs() < 1e-7);
    }

    #[test]
    fn isi_basic() {
        let events = vec![event(0, 1.0), event(0, 1.5), event(0, 2.0)];
        assert_eq!(inter_spike_intervals(&events, 10.0), vec![0.5, 0.5, 8.0]);
    }

    #[test]
    fn isi_single_spike() {
        let events = vec![event(0, 3.0)];
        assert_eq!(inter_spike_intervals(&events, 10.0), vec![7.0]);
    }

    #[test]
    fn isi_per_channel() {
        let events = vec![event(0, 1.0), event(1, 1.1), event(0, 1.4)];
        let isis = inter_spike_intervals(&events, 10.0);
        assert!((isis[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn burst_of_four() {
        let events: Vec<_> = [0.0, 0.005, 0.010, 0.015].iter().map(|&t| event(0, t)).collect();
        let bursts = detect_bursts(&events, &BurstConfig::default()).unwrap();
        assert_eq!(bursts.len(), 1);
        let b = &bursts[0];
        assert_eq!(b.n_spikes, 4);
        assert!((b.duration_s - 0.015).abs() < 1e-12);
        assert!((b.bsr - 0.00375).abs() < 1e-12);
    }

    #[test]
    fn three_spikes_not_a_burst() {
        let events: Vec<_> = [0.0, 0.005, 0.010].iter().map(|&t| event(0, t)).collect();
        assert!(detect_bursts(&events, &BurstConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn gap_splits_run() {
        let events: Vec<_> = [0.0, 0.005, 0.010, 0.019, 0.024]
            .iter()
            .map(|&t| event(0, t))
            .collect();
        assert!(detect_bursts(&events, &BurstConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn burst_time_translation_invariant() {
        let times = [0.0, 0.004, 0.009, 0.013, 0.030, 0.033, 0.037, 0.042];
        let b1 = detect_bursts(
            &times.iter().map(|&t| event(0, t)).collect::<Vec<_>>(),
            &BurstConfig::default(),
        )
        .unwrap();
        let b2 = detect_bursts(
            &times.iter().map(|&t| event(0, t + 5.0)).collect::<Vec<_>>(),
            &BurstConfig::default(),
        )
        .unwrap();
        assert_eq!(b1.len(), b2.len());
        for (a, b) in b1.iter().zip(&b2) {
            assert_eq!(a.n_spikes, b.n_spikes);
            assert!((a.duration_s - b.duration_s).abs() < 1e-9);
        }
    }

    #[test]
    fn bsr_identity() {
        let times = [0.0, 0.004, 0.008 - 1e-4, 0.011, 0.050, 0.052, 0.054, 0.056, 0.058];
        let bursts = detect_bursts(
            &times.iter().map(|&t| event(0, t)).collect::<Vec<_>>(),
            &BurstConfig::default(),
        )
        .unwrap();
        assert!(!bursts.is_empty());
        for b in bursts {
            assert!((b.bsr * b.n_spikes as f64 - b.duration_s).abs() < 1e-12);
        }
    }

    #[test]
    fn mfr_arithmetic() {
        assert_eq!(mean_firing_rate(&[0, 0, 0], 300.0).unwrap(), 0.0);
        assert_eq!(mean_firing_rate(&[300, 600], 300.0).unwrap(), 1.5);
        assert!(mean_firing_rate(&[1], 0.0).is_err());
    }
}
