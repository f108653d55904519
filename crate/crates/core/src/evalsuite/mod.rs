//! Quantitative evaluation of generated media against the affect timeline.

pub mod audio;
pub mod stats;
pub mod visual;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assembler::AudioClip;
use crate::data::ValenceState;
use crate::error::{Error, Result};
use crate::genclients::{EmbeddingVector, RgbRaster};

pub use audio::{band_energy_ratio, estimate_mode, mel_spectrogram, rms_intensity, spectral_centroid};
pub use stats::{best_crosscorr, pearson, wilcoxon_ranksum, CorrelationResult, CrossCorrResult};
pub use visual::{hsv_stats, HsvStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMetric {
    CosineDistance,
    Euclidean,
}

pub fn embedding_distance(a: &EmbeddingVector, b: &EmbeddingVector, metric: EmbeddingMetric) -> Result<f64> {
    if a.space != b.space {
        return Err(Error::invalid(format!(
            "embeddings from different spaces ({} vs {})",
            a.space, b.space
        )));
    }
    if a.values.len() != b.values.len() {
        return Err(Error::Shape {
            expected: format!("{} values", a.values.len()),
            actual: format!("{} values", b.values.len()),
        });
    }
    match metric {
        EmbeddingMetric::Euclidean => Ok(a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        EmbeddingMetric::CosineDistance => {
            let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
            let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm);
            }
            Ok((1.0 - dot / (na * nb)).max(0.0))
        }
    }
}

/// Visual and audio attributes of one generated segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub segment_index: usize,
    pub state: i8,
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
    pub spectral_centroid_hz: f64,
    pub rms: f64,
    pub high_low_energy_ratio: f64,
    pub mode_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    HueDeg,
    Saturation,
    Value,
    SpectralCentroidHz,
    Rms,
    HighLowEnergyRatio,
    ModeScore,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::HueDeg,
        Attribute::Saturation,
        Attribute::Value,
        Attribute::SpectralCentroidHz,
        Attribute::Rms,
        Attribute::HighLowEnergyRatio,
        Attribute::ModeScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::HueDeg => "hue_deg",
            Attribute::Saturation => "saturation",
            Attribute::Value => "value",
            Attribute::SpectralCentroidHz => "spectral_centroid_hz",
            Attribute::Rms => "rms",
            Attribute::HighLowEnergyRatio => "high_low_energy_ratio",
            Attribute::ModeScore => "mode_score",
        }
    }

    pub fn of(self, row: &AttributeRow) -> f64 {
        match self {
            Attribute::HueDeg => row.hue_deg,
            Attribute::Saturation => row.saturation,
            Attribute::Value => row.value,
            Attribute::SpectralCentroidHz => row.spectral_centroid_hz,
            Attribute::Rms => row.rms,
            Attribute::HighLowEnergyRatio => row.high_low_energy_ratio,
            Attribute::ModeScore => row.mode_score,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl AttributeRow {
    pub fn validate(&self) -> Result<()> {
        let finite = Attribute::ALL.iter().all(|a| a.of(self).is_finite());
        let ranged = (0.0..360.0).contains(&self.hue_deg)
            && (0.0..=1.0).contains(&self.saturation)
            && (0.0..=1.0).contains(&self.value)
            && (-1..=1).contains(&self.state);
        if !finite || !ranged {
            return Err(Error::invalid(format!(
                "attribute row {} out of range",
                self.segment_index
            )));
        }
        Ok(())
    }
}

/// Extracts every attribute for one segment from its thumbnail frame and
/// its cut audio.
pub fn extract_attributes(
    segment_index: usize,
    state: ValenceState,
    thumbnail: &RgbRaster,
    audio: &AudioClip,
) -> Result<AttributeRow> {
    let hsv = hsv_stats(thumbnail)?;
    let window = audio::DEFAULT_WINDOW.min(audio.len().next_power_of_two() / 2).max(2);
    let row = AttributeRow {
        segment_index,
        state: state.code(),
        hue_deg: hsv.hue_deg,
        saturation: hsv.saturation,
        value: hsv.value,
        spectral_centroid_hz: spectral_centroid(audio, window, audio::DEFAULT_HOP)?,
        rms: rms_intensity(audio)?,
        high_low_energy_ratio: band_energy_ratio(audio, audio::DEFAULT_SPLIT_HZ)?,
        mode_score: estimate_mode(audio)?.score,
    };
    row.validate()?;
    Ok(row)
}

/// Pearson correlation between state codes and one attribute.
pub fn affect_attribute_correlation(rows: &[AttributeRow], attribute: Attribute) -> Result<CorrelationResult> {
    let x: Vec<f64> = rows.iter().map(|r| r.state as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| attribute.of(r)).collect();
    pearson(&x, &y)
}
