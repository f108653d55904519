//! Deterministic offline clients. Output depends only on request content.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    EmbedItem, EmbeddingClient, EmbeddingSpace, EmbeddingVector, ImageClient, ImageRequest,
    MediaAsset, MediaPayload, MusicClient, MusicRequest, Provenance, RgbRaster, EMBEDDING_DIM,
};
use crate::assembler::AudioClip;
use crate::error::Result;
use crate::evalsuite::visual::hsv_to_rgb;
use crate::util::stable_hash;

pub const MOCK_MUSIC_RATE_HZ: u32 = 32_000;

/// Partials of the mock tone as (frequency ratio, amplitude); amplitudes sum
/// to 0.5.
const PARTIALS: [(f64, f64); 3] = [(1.0, 0.25), (1.5, 0.15), (2.0, 0.10)];

/// Base frequency in 110..880 Hz on a semitone grid, keyed by prompt.
pub fn mock_base_frequency(prompt: &str) -> f64 {
    let step = stable_hash(prompt.as_bytes()) % 36;
    110.0 * 2f64.powf(step as f64 / 12.0)
}

/// Tint hue in degrees keyed by prompt.
pub fn mock_tint_hue(prompt: &str) -> f64 {
    (stable_hash(prompt.as_bytes()) % 3600) as f64 / 10.0
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockMusicClient;

impl MusicClient for MockMusicClient {
    fn sample_rate_hz(&self) -> u32 {
        MOCK_MUSIC_RATE_HZ
    }

    fn generate(&self, request: &MusicRequest) -> Result<MediaAsset> {
        request.validate()?;
        let rate = MOCK_MUSIC_RATE_HZ as f64;
        let n = (request.duration_s * rate).ceil() as usize;
        let f0 = mock_base_frequency(&request.prompt);
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                PARTIALS
                    .iter()
                    .map(|(r, a)| a * (TAU * f0 * r * t).sin())
                    .sum::<f64>()
            })
            .collect();
        Ok(MediaAsset {
            payload: MediaPayload::Audio(AudioClip::new(samples, MOCK_MUSIC_RATE_HZ)?),
            provenance: Provenance::Mock,
            request_key: request.request_key(),
        })
    }
}

/// Blends the sketch toward a solid tint whose hue comes from the prompt;
/// frame `i` rotates the hue by `i` degrees.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockImageClient;

impl ImageClient for MockImageClient {
    fn generate(&self, request: &ImageRequest) -> Result<Vec<MediaAsset>> {
        request.validate()?;
        let s = request.strength;
        let base = mock_tint_hue(&request.prompt);
        let key = request.request_key();
        (0..request.frame_count)
            .map(|i| {
                let tint = hsv_to_rgb((base + i as f64).rem_euclid(360.0), 0.75, 0.85);
                let data = request
                    .sketch
                    .data()
                    .chunks_exact(3)
                    .flat_map(|p| {
                        (0..3).map(move |c| {
                            ((1.0 - s) * p[c] as f64 + s * 255.0 * tint[c]).round() as u8
                        })
                    })
                    .collect();
                Ok(MediaAsset {
                    payload: MediaPayload::Image(RgbRaster::new(
                        request.sketch.width(),
                        request.sketch.height(),
                        data,
                    )?),
                    provenance: Provenance::Mock,
                    request_key: key.clone(),
                })
            })
            .collect()
    }
}

/// Gaussian direction seeded by a content digest, normalized to unit length.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockEmbeddingClient;

impl EmbeddingClient for MockEmbeddingClient {
    fn dimension(&self, _space: EmbeddingSpace) -> usize {
        EMBEDDING_DIM
    }

    fn embed(&self, item: &EmbedItem<'_>, space: EmbeddingSpace) -> Result<EmbeddingVector> {
        let mut rng = ChaCha8Rng::from_seed(item.content_digest(space));
        let mut values: Vec<f64> = (0..EMBEDDING_DIM)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector { space, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclients::{embed, request_image_sequence, request_music};

    fn melody() -> AudioClip {
        AudioClip::new(vec![0.2; 100], 8000).unwrap()
    }

    fn music(prompt: &str, duration_s: f64) -> MusicRequest {
        MusicRequest {
            prompt: prompt.into(),
            melody: melody(),
            duration_s,
        }
    }

    fn sketch() -> RgbRaster {
        let data = (0..6 * 4 * 3).map(|i| (i * 11 % 256) as u8).collect();
        RgbRaster::new(6, 4, data).unwrap()
    }

    fn image(prompt: &str, strength: f64, frame_count: usize) -> ImageRequest {
        ImageRequest {
            prompt: prompt.into(),
            sketch: sketch(),
            strength,
            frame_count,
            seed: 0,
        }
    }

    #[test]
    fn music_examples() {
        let c = MockMusicClient;
        let a = request_music(&c, &music("sunny field", 2.0)).unwrap();
        let clip = a.audio().unwrap();
        assert_eq!(clip.len(), 64_000);
        assert_eq!(clip.sample_rate_hz(), 32_000);
        assert!(clip.samples().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(a.provenance, Provenance::Mock);
        assert_eq!(a.request_key, music("sunny field", 2.0).request_key());
        assert_eq!(request_music(&c, &music("sunny field", 2.0)).unwrap(), a);
        assert!(request_music(&c, &music("sunny field", 0.0)).is_err());
        assert_eq!(request_music(&c, &music("x", 0.00001)).unwrap().audio().unwrap().len(), 1);
    }

    #[test]
    fn music_frequency_follows_prompt() {
        let f = mock_base_frequency("a beach, joyful, warm mood");
        assert!((110.0..880.0).contains(&f));
        let distinct: std::collections::BTreeSet<u64> = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .map(|p| mock_base_frequency(p).to_bits())
            .collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn image_examples() {
        let c = MockImageClient;
        let one = request_image_sequence(&c, &image("p", 0.0, 1)).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].image().unwrap(), &sketch());

        let five = request_image_sequence(&c, &image("p", 0.5, 5)).unwrap();
        assert_eq!(five.len(), 5);
        for f in &five {
            let img = f.image().unwrap();
            assert_eq!((img.width(), img.height()), (6, 4));
        }

        let a = request_image_sequence(&c, &image("bright day", 1.0, 1)).unwrap();
        let b = request_image_sequence(&c, &image("gloomy night", 1.0, 1)).unwrap();
        let (a, b) = (a[0].image().unwrap(), b[0].image().unwrap());
        let solid = |r: &RgbRaster| r.pixels().all(|p| p == r.pixels().next().unwrap());
        assert!(solid(a) && solid(b));
        assert_ne!(a.data()[..3], b.data()[..3]);
    }

    #[test]
    fn embedding_examples() {
        let c = MockEmbeddingClient;
        let s = EmbeddingSpace::TextImage;
        let a = embed(&c, &EmbedItem::Text("a red kite"), s).unwrap();
        let b = embed(&c, &EmbedItem::Text("a red kite"), s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), EMBEDDING_DIM);
        let norm = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let other = embed(&c, &EmbedItem::Text("a blue kite"), s).unwrap();
        assert_ne!(a, other);
        let audio = melody();
        assert!(embed(&c, &EmbedItem::Audio(&audio), s).is_err());
        assert!(embed(&c, &EmbedItem::Audio(&audio), EmbeddingSpace::TextAudio).is_ok());
    }
}
