//! Colour attributes of generated frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genclients::RgbRaster;

/// `r, g, b` in [0, 1] to (hue degrees in [0, 360), saturation, value).
/// Achromatic colours get hue 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / c + 2.0)
    } else {
        60.0 * ((r - g) / c + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { c / max };
    (if h >= 360.0 { h - 360.0 } else { h }, s, max)
}

pub fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h_deg.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvStats {
    pub hue_deg: f64,
    pub saturation: f64,
    pub value: f64,
    /// No chromatic pixels, or chromatic hues that cancel on the circle;
    /// `hue_deg` is then reported as 0.
    pub hue_degenerate: bool,
}

/// Circular mean hue over chromatic pixels; arithmetic means of S and V over
/// all pixels.
pub fn hsv_stats(image: &RgbRaster) -> Result<HsvStats> {
    let n = image.width() as usize * image.height() as usize;
    if n == 0 {
        return Err(Error::invalid("empty image"));
    }
    // running means stay exact when every pixel agrees
    let (mut sx, mut sy, mut ms, mut mv) = (0.0, 0.0, 0.0, 0.0);
    let mut chromatic = 0usize;
    let mut shared_hue: Option<Option<f64>> = None;
    for (i, p) in image.pixels().enumerate() {
        let (h, s, v) = rgb_to_hsv(p.map(|c| c as f64 / 255.0));
        if s > 0.0 {
            let a = h.to_radians();
            sx += a.cos();
            sy += a.sin();
            chromatic += 1;
            shared_hue = match shared_hue {
                None => Some(Some(h)),
                Some(Some(prev)) if prev == h => Some(Some(h)),
                _ => Some(None),
            };
        }
        let k = (i + 1) as f64;
        ms += (s - ms) / k;
        mv += (v - mv) / k;
    }
    let resultant = if chromatic > 0 {
        (sx * sx + sy * sy).sqrt() / chromatic as f64
    } else {
        0.0
    };
    let degenerate = resultant < 1e-9;
    let hue = match shared_hue {
        Some(Some(h)) => h,
        _ if degenerate => 0.0,
        _ => sy.atan2(sx).to_degrees().rem_euclid(360.0),
    };
    Ok(HsvStats {
        hue_deg: if hue >= 360.0 { 0.0 } else { hue },
        saturation: ms,
        value: mv,
        hue_degenerate: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hsv_examples() {
        let red = hsv_stats(&RgbRaster::filled(3, 2, [255, 0, 0]).unwrap()).unwrap();
        assert_eq!((red.hue_deg, red.saturation, red.value), (0.0, 1.0, 1.0));
        assert!(!red.hue_degenerate);

        let gray = hsv_stats(&RgbRaster::filled(2, 2, [128, 128, 128]).unwrap()).unwrap();
        assert_eq!((gray.hue_deg, gray.saturation), (0.0, 0.0));
        assert!((gray.value - 128.0 / 255.0).abs() < 1e-12);

        let mut data = [255u8, 0, 0].repeat(2);
        data.extend([0u8, 255, 255].repeat(2));
        let split = hsv_stats(&RgbRaster::new(2, 2, data).unwrap()).unwrap();
        assert_eq!(split.saturation, 1.0);
        assert!(split.hue_degenerate);
    }

    #[test]
    fn circular_mean_wraps() {
        let a = hsv_to_rgb(350.0, 1.0, 1.0).map(|c| (c * 255.0).round() as u8);
        let b = hsv_to_rgb(10.0, 1.0, 1.0).map(|c| (c * 255.0).round() as u8);
        let mut data = a.to_vec();
        data.extend(b);
        let st = hsv_stats(&RgbRaster::new(2, 1, data).unwrap()).unwrap();
        let d = st.hue_deg.min(360.0 - st.hue_deg);
        assert!(d < 0.5, "{}", st.hue_deg);
    }

    #[test]
    fn known_conversions() {
        assert_eq!(rgb_to_hsv([0.0, 1.0, 0.0]), (120.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([0.0, 0.0, 1.0]), (240.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([1.0, 0.0, 1.0]), (300.0, 1.0, 1.0));
        assert_eq!(hsv_to_rgb(60.0, 1.0, 1.0), [1.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn rgb_hsv_roundtrip(pixels in prop::collection::vec(any::<[u8; 3]>(), 1..64)) {
            for p in pixels {
                let rgb = p.map(|c| c as f64 / 255.0);
                let (h, s, v) = rgb_to_hsv(rgb);
                prop_assert!((0.0..360.0).contains(&h));
                let back = hsv_to_rgb(h, s, v);
                for c in 0..3 {
                    prop_assert!((back[c] - rgb[c]).abs() <= 8.0 * f64::EPSILON);
                }
            }
        }
    }
}
