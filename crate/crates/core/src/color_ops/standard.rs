use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::raster;

/// Exposure scale: `v = ±1` is `±1.5` stops.
pub const EXPOSURE_STOPS: f32 = 1.5;
/// Black point shift at `v = 1`.
pub const BLACK_POINT_SCALE: f32 = 0.25;

/// Analytic stand-ins for the classic global adjustments the operators are
/// initialised from. Each is exactly the identity at strength 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardOpKind {
    BlackClipping,
    Exposure,
    Vibrance,
}

impl StandardOpKind {
    /// Initialisation order for the operator sequence.
    pub const ORDER: [StandardOpKind; 3] = [
        StandardOpKind::BlackClipping,
        StandardOpKind::Exposure,
        StandardOpKind::Vibrance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StandardOpKind::BlackClipping => "black-clipping",
            StandardOpKind::Exposure => "exposure",
            StandardOpKind::Vibrance => "vibrance",
        }
    }

    /// Maps a single RGB color.
    pub fn apply_pixel(&self, p: [f32; 3], v: f32) -> [f32; 3] {
        let clamp = |x: f32| x.clamp(0.0, 1.0);
        match self {
            StandardOpKind::Exposure => {
                let gain = (EXPOSURE_STOPS * v).exp2();
                p.map(|c| clamp(c * gain))
            }
            StandardOpKind::BlackClipping => {
                // b < 0 lifts the blacks instead of crushing them
                let b = BLACK_POINT_SCALE * v;
                p.map(|c| clamp((c - b) / (1.0 - b)))
            }
            StandardOpKind::Vibrance => {
                let max = p[0].max(p[1]).max(p[2]);
                let min = p[0].min(p[1]).min(p[2]);
                let amount = v * (1.0 - (max - min));
                // m − (m − c)(1 + amount), written so that amount = 0 is exact
                p.map(|c| clamp(c + (c - max) * amount))
            }
        }
    }

    pub fn apply(&self, img: &Tensor<f32>, v: f32) -> Result<Tensor<f32>> {
        let (h, w) = raster::rgb_dims(img)?;
        let pixels = raster::to_pixels(img)?;
        let mut out = Vec::with_capacity(pixels.len());
        for px in pixels.chunks_exact(3) {
            out.extend(self.apply_pixel([px[0], px[1], px[2]], v));
        }
        raster::from_pixels(h, w, &out)
    }
}

/// [`StandardOpKind::apply`] as a free function.
pub fn standard_op_apply(kind: StandardOpKind, img: &Tensor<f32>, v: f32) -> Result<Tensor<f32>> {
    kind.apply(img, v)
}

impl fmt::Display for StandardOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StandardOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "black-clipping" | "blackclipping" | "b" => Ok(StandardOpKind::BlackClipping),
            "exposure" | "e" => Ok(StandardOpKind::Exposure),
            "vibrance" | "v" => Ok(StandardOpKind::Vibrance),
            _ => Err(Error::invalid(format!("unknown standard operator {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> Tensor<f32> {
        let (h, w) = (9, 11);
        let data = (0..3 * h * w)
            .map(|i| (((i * 37) % 101) as f32 / 100.0).powf(1.4))
            .collect();
        Tensor::from_vec(&[3, h, w], data).unwrap()
    }

    #[test]
    fn zero_strength_is_exact_identity() {
        let img = test_image();
        for kind in StandardOpKind::ORDER {
            assert_eq!(kind.apply(&img, 0.0).unwrap(), img, "{kind}");
        }
    }

    #[test]
    fn exposure_doubles_at_two_thirds() {
        let p = StandardOpKind::Exposure.apply_pixel([0.25, 0.1, 0.0], 2.0 / 3.0);
        assert!((p[0] - 0.5).abs() < 1e-7);
        assert!((p[1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn black_clipping_floors_dark_values() {
        let b = BLACK_POINT_SCALE * 0.8;
        let p = StandardOpKind::BlackClipping.apply_pixel([b, b * 0.5, 0.9], 0.8);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], 0.0);
        assert!(p[2] > 0.0);
        let lifted = StandardOpKind::BlackClipping.apply_pixel([0.0; 3], -1.0);
        assert!(lifted[0] > 0.0);
    }

    #[test]
    fn vibrance_leaves_grey_alone_and_boosts_muted_colors() {
        let grey = [0.4; 3];
        assert_eq!(StandardOpKind::Vibrance.apply_pixel(grey, 1.0), grey);
        let muted = [0.5, 0.4, 0.4];
        let vivid = [0.9, 0.1, 0.1];
        let dm = 0.4 - StandardOpKind::Vibrance.apply_pixel(muted, 1.0)[1];
        let dv = 0.1 - StandardOpKind::Vibrance.apply_pixel(vivid, 1.0)[1];
        assert!(dm / 0.1 > dv / 0.8);
    }

    #[test]
    fn change_grows_with_strength() {
        let img = test_image();
        for kind in StandardOpKind::ORDER {
            for sign in [1.0f32, -1.0] {
                let mut last = 0.0;
                for step in 0..=10 {
                    let v = sign * step as f32 / 10.0;
                    let d = kind.apply(&img, v).unwrap().mean_abs_diff(&img);
                    assert!(d + 1e-9 >= last, "{kind} at {v}: {d} < {last}");
                    last = d;
                }
                assert!(last > 0.0);
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "exposure".parse::<StandardOpKind>().unwrap(),
            StandardOpKind::Exposure
        );
        assert_eq!(
            "black_clipping".parse::<StandardOpKind>().unwrap(),
            StandardOpKind::BlackClipping
        );
        assert!(matches!(
            "contrast".parse::<StandardOpKind>(),
            Err(Error::InvalidArgument(_))
        ));
    }
}
