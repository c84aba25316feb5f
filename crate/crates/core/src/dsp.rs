//! Bandpass filtering, robust noise estimation, and sliding-window time
//! splitting.

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io_store::{ClassLabel, Recording};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            order: 4,
            low_cut_hz: 300.0,
            high_cut_hz: 2000.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sampling_rate_hz: f64) -> Result<()> {
        if self.order == 0 {
            return Err(PipelineError::Config("filter order must be >= 1".into()));
        }
        if !(0.0 < self.low_cut_hz && self.low_cut_hz < self.high_cut_hz) {
            return Err(PipelineError::Config(format!(
                "bad cutoffs {}..{} Hz",
                self.low_cut_hz, self.high_cut_hz
            )));
        }
        if self.high_cut_hz >= sampling_rate_hz / 2.0 {
            return Err(PipelineError::Config(format!(
                "high cutoff {} Hz >= Nyquist {}",
                self.high_cut_hz,
                sampling_rate_hz / 2.0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }
    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn scale(self, k: f64) -> Complex {
        Complex::new(self.re * k, self.im * k)
    }
    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
    fn sqrt(self) -> Complex {
        let r = (self.re * self.re + self.im * self.im).sqrt();
        let theta = self.im.atan2(self.re);
        let rs = r.sqrt();
        Complex::new(rs * (theta / 2.0).cos(), rs * (theta / 2.0).sin())
    }
    fn abs(self) -> f64 {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}

/// One second-order section, direct form II transposed coefficients.
/// Denominator is normalized (a0 == 1).
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex) -> Complex {
        // H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
        let zi = Complex::new(1.0, 0.0).div(z);
        let zi2 = zi.mul(zi);
        let num = Complex::new(self.b[0], 0.0)
            .add(zi.scale(self.b[1]))
            .add(zi2.scale(self.b[2]));
        let den = Complex::new(1.0, 0.0)
            .add(zi.scale(self.a[1]))
            .add(zi2.scale(self.a[2]));
        num.div(den)
    }
}

/// Butterworth bandpass as a cascade of second-order sections. An order-N
/// lowpass prototype maps to 2N poles after the bandpass transform, giving N
/// sections. The -3 dB points land on the two cutoff frequencies.
#[derive(Debug, Clone)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn butterworth_bandpass(spec: &FilterSpec, fs: f64) -> Result<SosFilter> {
        spec.validate(fs)?;
        let n = spec.order;
        // Bilinear pre-warp of the analog cutoffs.
        let w1 = 2.0 * fs * (std::f64::consts::PI * spec.low_cut_hz / fs).tan();
        let w2 = 2.0 * fs * (std::f64::consts::PI * spec.high_cut_hz / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        // Lowpass prototype poles on the unit circle, left half plane.
        let mut analog_poles = Vec::with_capacity(2 * n);
        for k in 1..=n {
            let theta = std::f64::consts::PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
            let p = Complex::new(theta.cos(), theta.sin());
            // Bandpass transform: s -> (s^2 + w0^2) / (bw * s), solved for s.
            let half = p.scale(bw / 2.0);
            let disc = half.mul(half).sub(Complex::new(w0sq, 0.0)).sqrt();
            analog_poles.push(half.add(disc));
            analog_poles.push(half.sub(disc));
        }

        // Bilinear transform to the z plane: z = (2fs + s) / (2fs - s).
        let two_fs = 2.0 * fs;
        let z_poles: Vec<Complex> = analog_poles
            .iter()
            .map(|&s| Complex::new(two_fs, 0.0).add(s).div(Complex::new(two_fs, 0.0).sub(s)))
            .collect();

        // Each conjugate pair forms one section; the transform's N zeros at
        // z=1 and N at z=-1 are split one of each per section: b = 1 - z^-2.
        let mut sections = Vec::with_capacity(n);
        for p in z_poles.iter().filter(|p| p.im > 0.0) {
            let a1 = -2.0 * p.re;
            let a2 = p.re * p.re + p.im * p.im;
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, a1, a2],
            });
        }
        if sections.len() != n {
            return Err(PipelineError::Numerical(
                "pole pairing failed in filter design".into(),
            ));
        }

        let mut filt = SosFilter { sections };
        // Normalize to unit gain at the (warped) center frequency.
        let wc_digital = 2.0 * ((w0sq.sqrt()) / two_fs).atan();
        let g = filt.gain_at_omega(wc_digital);
        if !(g.is_finite() && g > 0.0) {
            return Err(PipelineError::Numerical("degenerate filter gain".into()));
        }
        let per_section = g.powf(-1.0 / n as f64);
        for s in &mut filt.sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Ok(filt)
    }

    /// Magnitude response at digital angular frequency omega (rad/sample).
    pub fn gain_at_omega(&self, omega: f64) -> f64 {
        let z = Complex::new(omega.cos(), omega.sin());
        self.sections
            .iter()
            .map(|s| s.response(z).abs())
            .product()
    }

    /// Magnitude response at a frequency in Hz.
    pub fn gain_at_hz(&self, f_hz: f64, fs: f64) -> f64 {
        self.gain_at_omega(2.0 * std::f64::consts::PI * f_hz / fs)
    }

    /// Causal single-pass filtering of one channel, zero initial state.
    pub fn filter_channel(&self, x: &[f32]) -> Vec<f32> {
        let mut state: Vec<[f64; 2]> = vec![[0.0; 2]; self.sections.len()];
        let mut out = Vec::with_capacity(x.len());
        for &xi in x {
            let mut v = xi as f64;
            for (sec, st) in self.sections.iter().zip(state.iter_mut()) {
                let y = sec.b[0] * v + st[0];
                st[0] = sec.b[1] * v - sec.a[1] * y + st[1];
                st[1] = sec.b[2] * v - sec.a[2] * y;
                v = y;
            }
            out.push(v as f32);
        }
        out
    }
}

/// Filter every channel of a recording independently. Output shape matches.
pub fn bandpass_filter(rec: &Recording, spec: &FilterSpec) -> Result<Recording> {
    let filt = SosFilter::butterworth_bandpass(spec, rec.meta.sampling_rate_hz)?;
    let samples = rec
        .samples
        .iter()
        .map(|ch| filt.filter_channel(ch))
        .collect();
    Ok(Recording {
        meta: rec.meta.clone(),
        samples,
    })
}

/// Robust noise sigma: median absolute deviation scaled for Gaussian
/// consistency. Insensitive to the spikes riding on the noise floor.
pub fn estimate_noise_sigma(channel: &[f32]) -> Result<f64> {
    if channel.len() < 1000 {
        return Err(PipelineError::Data(format!(
            "noise estimate needs >= 1000 samples, got {}",
            channel.len()
        )));
    }
    let med = median(channel.iter().map(|&v| v as f64));
    let mad = median(channel.iter().map(|&v| (v as f64 - med).abs()));
    Ok(mad / 0.6745)
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub window_s: f64,
    pub step_s: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            window_s: 10.0,
            step_s: 10.0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_s > 0.0 && self.step_s <= self.window_s) {
            return Err(PipelineError::Config(format!(
                "need 0 < step ({}) <= window ({})",
                self.step_s, self.window_s
            )));
        }
        Ok(())
    }

    /// Augmentation factor: window over step.
    pub fn alpha(&self) -> f64 {
        self.window_s / self.step_s
    }
}

/// Identity and geometry of a segment, without the sample data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub parent_id: String,
    pub well_id: String,
    pub class_label: ClassLabel,
    pub start_s: f64,
    pub window_s: f64,
    pub sampling_rate_hz: f64,
}

/// One time-split window of a recording.
#[derive(Debug, Clone)]
pub struct Segment {
    pub parent_id: String,
    pub well_id: String,
    pub class_label: ClassLabel,
    pub start_s: f64,
    pub window_s: f64,
    pub samples: Vec<Vec<f32>>,
    pub sampling_rate_hz: f64,
}

impl Segment {
    pub fn meta(&self) -> SegmentMeta {
        SegmentMeta {
            parent_id: self.parent_id.clone(),
            well_id: self.well_id.clone(),
            class_label: self.class_label,
            start_s: self.start_s,
            window_s: self.window_s,
            sampling_rate_hz: self.sampling_rate_hz,
        }
    }
}

/// Start times of the emitted windows. A window is emitted only when it fits
/// entirely inside the recording; trailing partial windows are dropped.
pub fn split_starts(duration_s: f64, spec: &SplitSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.window_s > duration_s {
        return Err(PipelineError::Data(format!(
            "window {} s longer than recording {} s",
            spec.window_s, duration_s
        )));
    }
    let mut starts = Vec::new();
    let mut i = 0u64;
    loop {
        let start = i as f64 * spec.step_s;
        // Tolerate float accumulation at the exact-fit boundary.
        if start + spec.window_s > duration_s + 1e-9 {
            break;
        }
        starts.push(start);
        i += 1;
    }
    Ok(starts)
}

/// Extract one window as an owned segment.
pub fn extract_segment(rec: &Recording, start_s: f64, window_s: f64) -> Segment {
    let fs = rec.meta.sampling_rate_hz;
    let start_idx = (start_s * fs).round() as usize;
    let len = (window_s * fs).round() as usize;
    let samples = rec
        .samples
        .iter()
        .map(|ch| ch[start_idx..start_idx + len].to_vec())
        .collect();
    Segment {
        parent_id: rec.meta.recording_id.clone(),
        well_id: rec.meta.well_id.clone(),
        class_label: rec.meta.class_label,
        start_s,
        window_s,
        samples,
        sampling_rate_hz: fs,
    }
}

/// Materialize every window. For long recordings with small steps prefer
/// `split_starts` + `extract_segment` to bound memory.
pub fn time_split(rec: &Recording, spec: &SplitSpec) -> Result<Vec<Segment>> {
    let starts = split_starts(rec.meta.duration_s, spec)?;
    Ok(starts
        .into_iter()
        .map(|s| extract_segment(rec, s, spec.window_s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io_store::RecordingMeta;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rec_from(channels: Vec<Vec<f32>>, fs: f64) -> Recording {
        let n_samples = channels[0].len();
        Recording {
            meta: RecordingMeta {
                recording_id: "t".into(),
                well_id: "A1".into(),
                class_label: ClassLabel::ClassA,
                sampling_rate_hz: fs,
                n_channels: channels.len(),
                n_samples,
                duration_s: n_samples as f64 / fs,
                maturation_day: None,
                units: "microvolt".into(),
            },
            samples: channels,
        }
    }

    const FS: f64 = 12500.0;

    fn steady_state_amplitude(filtered: &[f32], fs: f64) -> f64 {
        // Skip the first half to clear the transient.
        let tail = &filtered[filtered.len() / 2..];
        let _ = fs;
        tail.iter().map(|&v| (v as f64).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn dc_is_rejected() {
        let rec = rec_from(vec![vec![100.0; (FS as usize) * 2]], FS);
        let out = bandpass_filter(&rec, &FilterSpec::default()).unwrap();
        // Beyond 50 ms the DC transient must be gone.
        let start = (0.050 * FS) as usize;
        for &v in &out.samples[0][start..] {
            assert!(v.abs() < 0.1, "residual {v}");
        }
    }

    fn sine_gain_db(f_hz: f64) -> f64 {
        let n = (FS * 2.0) as usize;
        let x: Vec<f32> = (0..n)
            .map(|i| (10.0 * (2.0 * std::f64::consts::PI * f_hz * i as f64 / FS).sin()) as f32)
            .collect();
        let rec = rec_from(vec![x], FS);
        let out = bandpass_filter(&rec, &FilterSpec::default()).unwrap();
        let amp = steady_state_amplitude(&out.samples[0], FS);
        20.0 * (amp / 10.0).log10()
    }

    #[test]
    fn midband_gain_near_unity() {
        // 775 Hz is the geometric middle of 300..2000.
        let g = sine_gain_db(774.6);
        assert!(g.abs() < 0.5, "midband gain {g} dB");
    }

    #[test]
    fn cutoff_gain_is_minus_3db() {
        for f in [300.0, 2000.0] {
            let g = sine_gain_db(f);
            assert!((g + 3.0103).abs() < 0.5, "gain at {f} Hz = {g} dB");
        }
    }

    #[test]
    fn analytic_response_matches_measured_sine() {
        let filt = SosFilter::butterworth_bandpass(&FilterSpec::default(), FS).unwrap();
        for f in [400.0, 775.0, 1500.0] {
            let analytic = filt.gain_at_hz(f, FS);
            let measured = 10f64.powf(sine_gain_db(f) / 20.0);
            assert!(
                (analytic - measured).abs() < 0.02,
                "f={f}: analytic {analytic} vs measured {measured}"
            );
        }
    }

    #[test]
    fn filter_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (2.5f64, -1.25f64);
        let combo: Vec<f32> = x
            .iter()
            .zip(&y)
            .map(|(&xi, &yi)| (a * xi as f64 + b * yi as f64) as f32)
            .collect();
        let filt = SosFilter::butterworth_bandpass(&FilterSpec::default(), FS).unwrap();
        let fx = filt.filter_channel(&x);
        let fy = filt.filter_channel(&y);
        let fc = filt.filter_channel(&combo);
        for i in 0..n {
            let expect = a * fx[i] as f64 + b * fy[i] as f64;
            let got = fc[i] as f64;
            assert!((got - expect).abs() <= 1e-6 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn filter_is_stable_on_long_bounded_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let filt = SosFilter::butterworth_bandpass(&FilterSpec::default(), FS).unwrap();
        let x: Vec<f32> = (0..1_000_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = filt.filter_channel(&x);
        assert!(y.iter().all(|&v| v.abs() <= 100.0));
    }

    #[test]
    fn cutoff_above_nyquist_rejected() {
        let spec = FilterSpec {
            order: 4,
            low_cut_hz: 300.0,
            high_cut_hz: 7000.0,
        };
        assert!(SosFilter::butterworth_bandpass(&spec, FS).is_err());
    }

    #[test]
    fn noise_sigma_zero_channel() {
        assert_eq!(estimate_noise_sigma(&vec![0.0f32; 1000]).unwrap(), 0.0);
    }

    #[test]
    fn noise_sigma_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = rand_distr::Normal::new(0.0f64, 20.0).unwrap();
        let x: Vec<f32> = (0..100_000).map(|_| rng.sample(normal) as f32).collect();
        let sigma = estimate_noise_sigma(&x).unwrap();
        assert!((sigma - 20.0).abs() < 1.0, "sigma {sigma}");
    }

    #[test]
    fn noise_sigma_robust_to_spikes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = rand_distr::Normal::new(0.0f64, 20.0).unwrap();
        let x: Vec<f32> = (0..100_000)
            .map(|i| {
                if i % 100 == 0 {
                    -500.0
                } else {
                    rng.sample(normal) as f32
                }
            })
            .collect();
        let sigma = estimate_noise_sigma(&x).unwrap();
        assert!((sigma - 20.0).abs() < 2.0, "sigma {sigma}");
    }

    #[test]
    fn short_input_rejected() {
        assert!(estimate_noise_sigma(&[0.0; 999]).is_err());
    }

    fn count_segments(duration: f64, window: f64, step: f64) -> usize {
        split_starts(duration, &SplitSpec { window_s: window, step_s: step })
            .unwrap()
            .len()
    }

    #[test]
    fn split_counts() {
        assert_eq!(count_segments(300.0, 10.0, 10.0), 30);
        assert_eq!(count_segments(300.0, 10.0, 1.0), 291);
        assert_eq!(count_segments(300.0, 10.0, 5.0), 59);
    }

    #[test]
    fn window_longer_than_recording_rejected() {
        assert!(split_starts(5.0, &SplitSpec { window_s: 10.0, step_s: 1.0 }).is_err());
    }

    #[test]
    fn segment_contents_match_source() {
        let fs = 100.0;
        let x: Vec<f32> = (0..1000).map(|i| i as f32).collect();
        let rec = rec_from(vec![x], fs);
        let segs = time_split(
            &rec,
            &SplitSpec {
                window_s: 2.0,
                step_s: 1.0,
            },
        )
        .unwrap();
        assert_eq!(segs.len(), 9);
        assert_eq!(segs[3].samples[0][0], 300.0);
        assert_eq!(segs[3].samples[0].len(), 200);
    }

    proptest::proptest! {
        #[test]
        fn split_count_matches_closed_form(
            duration in 10.0f64..400.0,
            window in 1.0f64..10.0,
            ratio in 0.05f64..1.0,
        ) {
            let step = window * ratio;
            let n = count_segments(duration, window, step);
            let expect = ((duration - window) / step + 1e-9).floor() as usize + 1;
            proptest::prop_assert_eq!(n, expect);
        }
    }
}
