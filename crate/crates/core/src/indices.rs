//! Spectral water indices and threshold masks.
//!
//! Water absorbs strongly in the short-wave infrared, so the normalized
//! difference between green and SWIR2 rises over water while soil and built-up
//! surfaces stay low. Thresholding such an index gives the coarse masks that
//! seed the refiner.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mask::{Mask, MaskLabel};

/// Named spectral bands a scene raster may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    R,
    G,
    B,
    Nir,
    Swir2,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::R, Band::G, Band::B, Band::Nir, Band::Swir2];

    pub fn name(&self) -> &'static str {
        match self {
            Band::R => "R",
            Band::G => "G",
            Band::B => "B",
            Band::Nir => "NIR",
            Band::Swir2 => "SWIR2",
        }
    }

    pub fn from_name(name: &str) -> Option<Band> {
        match name {
            "R" => Some(Band::R),
            "G" => Some(Band::G),
            "B" => Some(Band::B),
            "NIR" => Some(Band::Nir),
            "SWIR2" => Some(Band::Swir2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Multiband tile with raw reflectance-style samples. Values are kept as
/// ingested (roughly [0, 1.2] for the synthetic spectral model); z-score
/// normalization for network input happens downstream and never feeds index
/// computation.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    bands: Vec<(Band, Vec<f64>)>,
    pub nodata: Option<f64>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<(Band, Vec<f64>)>,
        nodata: Option<f64>,
    ) -> Result<Self> {
        for (band, plane) in &bands {
            if plane.len() != width * height {
                return Err(CoreError::BandSize {
                    band: *band,
                    got: plane.len(),
                    expected: width * height,
                });
            }
        }
        Ok(Raster { width, height, bands, nodata })
    }

    pub fn band(&self, band: Band) -> Result<&[f64]> {
        self.bands
            .iter()
            .find(|(b, _)| *b == band)
            .map(|(_, plane)| plane.as_slice())
            .ok_or(CoreError::MissingBand(band))
    }

    pub fn has_band(&self, band: Band) -> bool {
        self.bands.iter().any(|(b, _)| *b == band)
    }

    pub fn bands(&self) -> impl Iterator<Item = (Band, &[f64])> {
        self.bands.iter().map(|(b, p)| (*b, p.as_slice()))
    }

    fn is_nodata(&self, v: f64) -> bool {
        self.nodata.is_some_and(|nd| v == nd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Mndwi,
    Ndwi,
}

/// Normalized-difference index plane. `undefined` marks pixels without
/// spectral information (zero denominator or nodata input); their value is 0
/// and threshold masks map them to ignore.
#[derive(Debug, Clone)]
pub struct IndexMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub undefined: Vec<bool>,
    pub kind: IndexKind,
}

impl IndexMap {
    pub fn from_values(width: usize, height: usize, values: Vec<f64>, kind: IndexKind) -> Self {
        assert_eq!(values.len(), width * height);
        IndexMap {
            width,
            height,
            undefined: vec![false; values.len()],
            values,
            kind,
        }
    }
}

fn normalized_difference(
    raster: &Raster,
    plus: Band,
    minus: Band,
    kind: IndexKind,
) -> Result<IndexMap> {
    let a = raster.band(plus)?;
    let b = raster.band(minus)?;
    let n = raster.width * raster.height;
    let mut values = vec![0.0; n];
    let mut undefined = vec![false; n];
    for i in 0..n {
        if raster.is_nodata(a[i]) || raster.is_nodata(b[i]) {
            undefined[i] = true;
            continue;
        }
        let denom = a[i] + b[i];
        if denom == 0.0 {
            // both bands zero carries no spectral information
            undefined[i] = true;
        } else {
            values[i] = (a[i] - b[i]) / denom;
        }
    }
    Ok(IndexMap {
        width: raster.width,
        height: raster.height,
        values,
        undefined,
        kind,
    })
}

/// Modified normalized difference water index: (G - SWIR2) / (G + SWIR2).
/// High values indicate surface water.
pub fn mndwi(raster: &Raster) -> Result<IndexMap> {
    normalized_difference(raster, Band::G, Band::Swir2, IndexKind::Mndwi)
}

/// Normalized difference water index: (G - NIR) / (G + NIR). Noisier water
/// signal than MNDWI, used as a classical baseline.
pub fn ndwi(raster: &Raster) -> Result<IndexMap> {
    normalized_difference(raster, Band::G, Band::Nir, IndexKind::Ndwi)
}

/// Binary mask by thresholding an index plane. The comparison direction is
/// explicit: with `water_when_at_or_above` the water class is value >=
/// threshold, otherwise value <= threshold. Undefined pixels become ignore.
pub fn threshold_mask(index: &IndexMap, threshold: f64, water_when_at_or_above: bool) -> Mask {
    let labels = index
        .values
        .iter()
        .zip(&index.undefined)
        .map(|(v, und)| {
            if *und {
                MaskLabel::Ignore
            } else {
                let is_water = if water_when_at_or_above {
                    *v >= threshold
                } else {
                    *v <= threshold
                };
                if is_water {
                    MaskLabel::Water
                } else {
                    MaskLabel::NonWater
                }
            }
        })
        .collect();
    Mask::new(index.width, index.height, labels)
}

/// Threshold a raw SWIR plane: low reflectance means water, so pixels at or
/// below the threshold are labeled water.
pub fn threshold_swir_mask(swir: &[f64], width: usize, height: usize, threshold: f64) -> Mask {
    assert_eq!(swir.len(), width * height);
    let labels = swir
        .iter()
        .map(|v| {
            if *v <= threshold {
                MaskLabel::Water
            } else {
                MaskLabel::NonWater
            }
        })
        .collect();
    Mask::new(width, height, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_pixel(g: f64, swir: f64, nir: f64) -> Raster {
        Raster::new(
            1,
            1,
            vec![
                (Band::G, vec![g]),
                (Band::Swir2, vec![swir]),
                (Band::Nir, vec![nir]),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn mndwi_examples() {
        assert_eq!(mndwi(&single_pixel(0.4, 0.4, 0.0)).unwrap().values[0], 0.0);
        assert_eq!(mndwi(&single_pixel(0.5, 0.0, 0.0)).unwrap().values[0], 1.0);
        assert!((mndwi(&single_pixel(0.1, 0.3, 0.0)).unwrap().values[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn ndwi_examples() {
        assert_eq!(ndwi(&single_pixel(0.2, 0.0, 0.2)).unwrap().values[0], 0.0);
        assert_eq!(ndwi(&single_pixel(0.2, 0.0, 0.0)).unwrap().values[0], 1.0);
        assert!((ndwi(&single_pixel(0.3, 0.0, 0.1)).unwrap().values[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_is_undefined_and_ignored() {
        let idx = mndwi(&single_pixel(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(idx.values[0], 0.0);
        assert!(idx.undefined[0]);
        let mask = threshold_mask(&idx, 0.35, true);
        assert_eq!(mask.labels[0], MaskLabel::Ignore);
    }

    #[test]
    fn missing_band_is_reported() {
        let raster = Raster::new(1, 1, vec![(Band::G, vec![0.2])], None).unwrap();
        assert!(matches!(mndwi(&raster), Err(CoreError::MissingBand(Band::Swir2))));
    }

    #[test]
    fn nodata_pixels_are_ignored() {
        let raster = Raster::new(
            2,
            1,
            vec![(Band::G, vec![-999.0, 0.4]), (Band::Swir2, vec![0.1, 0.1])],
            Some(-999.0),
        )
        .unwrap();
        let idx = mndwi(&raster).unwrap();
        assert!(idx.undefined[0]);
        assert!(!idx.undefined[1]);
    }

    #[test]
    fn threshold_mask_examples() {
        let uniform = IndexMap::from_values(2, 2, vec![0.5; 4], IndexKind::Mndwi);
        let all_water = threshold_mask(&uniform, 0.35, true);
        assert!(all_water.labels.iter().all(|l| *l == MaskLabel::Water));

        let zeros = IndexMap::from_values(2, 2, vec![0.0; 4], IndexKind::Mndwi);
        let none = threshold_mask(&zeros, 0.35, true);
        assert!(none.labels.iter().all(|l| *l == MaskLabel::NonWater));

        let mixed = IndexMap::from_values(2, 2, vec![0.4, 0.3, 0.35, -0.1], IndexKind::Mndwi);
        let mask = threshold_mask(&mixed, 0.35, true);
        assert_eq!(
            mask.labels,
            vec![
                MaskLabel::Water,
                MaskLabel::NonWater,
                MaskLabel::Water,
                MaskLabel::NonWater
            ]
        );
    }

    #[test]
    fn swir_threshold_direction_is_low_means_water() {
        let all_water = threshold_swir_mask(&[0.0; 4], 2, 2, 0.35);
        assert!(all_water.labels.iter().all(|l| *l == MaskLabel::Water));
        let none = threshold_swir_mask(&[1.0; 4], 2, 2, 0.35);
        assert!(none.labels.iter().all(|l| *l == MaskLabel::NonWater));
        let mixed = threshold_swir_mask(&[0.1, 0.5, 0.35, 0.36], 2, 2, 0.35);
        assert_eq!(
            mixed.labels,
            vec![
                MaskLabel::Water,
                MaskLabel::NonWater,
                MaskLabel::Water,
                MaskLabel::NonWater
            ]
        );
    }

    proptest! {
        #[test]
        fn index_values_stay_in_unit_interval(
            g in 0.0f64..2.0,
            s in 0.0f64..2.0,
        ) {
            let idx = mndwi(&single_pixel(g, s, 0.0)).unwrap();
            prop_assert!(idx.values[0] >= -1.0 && idx.values[0] <= 1.0);
        }

        #[test]
        fn mndwi_is_antisymmetric_in_its_bands(
            g in 0.001f64..2.0,
            s in 0.001f64..2.0,
        ) {
            let a = mndwi(&single_pixel(g, s, 0.0)).unwrap().values[0];
            let b = mndwi(&single_pixel(s, g, 0.0)).unwrap().values[0];
            prop_assert!((a + b).abs() < 1e-12);
        }

        #[test]
        fn raising_threshold_never_adds_water(
            values in proptest::collection::vec(-1.0f64..1.0, 16),
            t1 in -1.0f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let idx = IndexMap::from_values(4, 4, values, IndexKind::Mndwi);
            let low = threshold_mask(&idx, t1, true);
            let high = threshold_mask(&idx, t1 + dt, true);
            for (a, b) in low.labels.iter().zip(&high.labels) {
                // water at the higher threshold implies water at the lower one
                prop_assert!(!(*b == MaskLabel::Water && *a != MaskLabel::Water));
            }
        }
    }
}
