//! A separable synthetic EEG corpus: positive segments carry a narrow-band
//! burst on every channel, negative segments are white noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Label, SegmentSource, CHANNELS, SAMPLE_RATE, SEGMENT_LEN};
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticEeg {
    pub segments: usize,
    pub channels: usize,
    pub samples: usize,
    pub fs: f64,
    pub burst_hz: f64,
    pub burst_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticEeg {
    /// `segments` alternating positive/negative segments of `22 x 1280`.
    pub fn new(segments: usize, seed: u64) -> Self {
        Self {
            segments,
            channels: CHANNELS,
            samples: SEGMENT_LEN,
            fs: SAMPLE_RATE,
            burst_hz: 10.0,
            burst_amplitude: 2.0,
            noise_std: 1.0,
            seed,
        }
    }

    fn rng(&self, i: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        rng
    }
}

/// Two independent standard normals by the Box-Muller transform.
fn normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = math::sqrt(-2.0 * math::ln(u1));
    let a = core::f64::consts::TAU * u2;
    (r * math::cos(a), r * math::sin(a))
}

impl SegmentSource for SyntheticEeg {
    fn len(&self) -> usize {
        self.segments
    }

    fn channels(&self) -> usize {
        self.channels
    }

    fn segment_len(&self) -> usize {
        self.samples
    }

    fn label(&self, i: usize) -> Label {
        if i.is_multiple_of(2) {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    fn load(&self, i: usize, out: &mut [f64]) -> Result<()> {
        if i >= self.segments {
            return Err(Error::invalid("synthetic", alloc::format!("segment {i} out of range")));
        }
        if out.len() != self.channels * self.samples {
            return Err(Error::shape("synthetic", &[self.channels * self.samples], &[out.len()]));
        }
        let mut rng = self.rng(i);
        for pair in out.chunks_mut(2) {
            let (a, b) = normal_pair(&mut rng);
            pair[0] = a * self.noise_std;
            if let Some(x) = pair.get_mut(1) {
                *x = b * self.noise_std;
            }
        }
        if self.label(i) == Label::Positive {
            let w = core::f64::consts::TAU * self.burst_hz / self.fs;
            for row in out.chunks_mut(self.samples) {
                let phase = core::f64::consts::TAU * rng.random::<f64>();
                for (t, v) in row.iter_mut().enumerate() {
                    *v += self.burst_amplitude * math::sin(w * t as f64 + phase);
                }
            }
        }
        Ok(())
    }
}
