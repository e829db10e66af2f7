//! Pixel labelling with a fixed ensemble of decision stumps.

use super::render_rows;
use crate::error::{Error, Result};
use crate::pipeline::{ExecContext, InputCount, ProcessObject};
use crate::raster::{ImageInfo, PixelBuffer, Region, SampleType, SampleView};

/// `band <= threshold` selects `le`, otherwise `gt`. A `None` branch does
/// not match and evaluation moves on to the next stump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stump {
    pub band: usize,
    pub threshold: f64,
    pub le: Option<u32>,
    pub gt: Option<u32>,
}

/// First matching stump wins; `default` labels pixels no stump matched.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionRule {
    stumps: Vec<Stump>,
    default: Option<u32>,
}

impl DecisionRule {
    pub fn new(stumps: Vec<Stump>, default: Option<u32>) -> Result<Self> {
        let total = stumps.iter().any(|s| s.le.is_some() && s.gt.is_some());
        if default.is_none() && !total {
            return Err(Error::Config(
                "decision rule needs a default class or a stump labelling both branches".into(),
            ));
        }
        if stumps.iter().any(|s| s.threshold.is_nan()) {
            return Err(Error::Config("decision rule threshold is NaN".into()));
        }
        Ok(DecisionRule { stumps, default })
    }

    pub fn stumps(&self) -> &[Stump] {
        &self.stumps
    }

    pub fn default_class(&self) -> Option<u32> {
        self.default
    }

    /// Every label the rule can emit.
    pub fn labels(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .stumps
            .iter()
            .flat_map(|s| [s.le, s.gt])
            .chain([self.default])
            .flatten()
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn classify(&self, pixel: &[f64]) -> u32 {
        for s in &self.stumps {
            let branch = if pixel[s.band] <= s.threshold { s.le } else { s.gt };
            if let Some(label) = branch {
                return label;
            }
        }
        // the constructor guarantees a total stump or a default
        self.default.unwrap_or(0)
    }

    pub fn validate_for(&self, info: &ImageInfo, output: SampleType) -> Result<()> {
        for (i, s) in self.stumps.iter().enumerate() {
            if s.band >= info.bands {
                return Err(Error::Config(format!(
                    "stump {i} tests band {} of a {}-band input",
                    s.band, info.bands
                )));
            }
        }
        for label in self.labels() {
            if label as f64 > output.max_value() {
                return Err(Error::Config(format!(
                    "class {label} does not fit {}",
                    output.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ClassifyRule {
    rule: DecisionRule,
    output_type: SampleType,
}

impl ClassifyRule {
    pub fn new(rule: DecisionRule, output_type: SampleType) -> Self {
        ClassifyRule { rule, output_type }
    }
}

impl ProcessObject for ClassifyRule {
    fn kind(&self) -> &'static str {
        "classify_rule"
    }

    fn input_count(&self) -> InputCount {
        InputCount::Exactly(1)
    }

    fn region_independent(&self) -> bool {
        true
    }

    fn output_information(&self, inputs: &[ImageInfo]) -> Result<ImageInfo> {
        self.rule.validate_for(&inputs[0], self.output_type)?;
        let mut info = inputs[0];
        info.bands = 1;
        info.sample_type = self.output_type;
        Ok(info)
    }

    fn generate(
        &self,
        region: Region,
        info: &ImageInfo,
        inputs: &[&PixelBuffer],
        exec: &ExecContext,
    ) -> Result<PixelBuffer> {
        let view = SampleView::new(inputs[0]);
        render_rows(region, 1, info.sample_type, exec.parallelism, |y, row| {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.rule.classify(view.pixel(region.x() + i, y)) as f64;
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::RandomSource;

    fn stump(band: usize, threshold: f64, le: Option<u32>, gt: Option<u32>) -> Stump {
        Stump { band, threshold, le, gt }
    }

    #[test]
    fn single_stump() {
        let rule = DecisionRule::new(vec![stump(0, 100.0, Some(1), Some(2))], None).unwrap();
        assert_eq!(rule.classify(&[50.0]), 1);
        assert_eq!(rule.classify(&[100.0]), 1);
        assert_eq!(rule.classify(&[101.0]), 2);
    }

    #[test]
    fn default_only_is_constant() {
        let rule = DecisionRule::new(vec![], Some(7)).unwrap();
        let info = ImageInfo::new(5, 5, 2, SampleType::U16);
        let img = RandomSource::new(info, 1)
            .unwrap()
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .unwrap();
        let f = ClassifyRule::new(rule, SampleType::U8);
        let out_info = f.output_information(&[info]).unwrap();
        let out = f.generate(info.largest_region(), &out_info, &[&img], &ExecContext::default()).unwrap();
        assert!(out.to_f64().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn rule_without_total_branch_needs_default() {
        assert!(DecisionRule::new(vec![stump(0, 1.0, Some(1), None)], None).is_err());
        assert!(DecisionRule::new(vec![], None).is_err());
    }

    #[test]
    fn three_stumps_match_pointwise_oracle() {
        let rule = DecisionRule::new(
            vec![
                stump(0, 60.0, Some(1), None),
                stump(1, 200.0, None, Some(2)),
                stump(2, 128.0, Some(3), Some(4)),
            ],
            Some(9),
        )
        .unwrap();
        let info = ImageInfo::new(8, 8, 3, SampleType::U8);
        let img = RandomSource::new(info, 77)
            .unwrap()
            .generate(info.largest_region(), &info, &[], &ExecContext::default())
            .unwrap();
        let f = ClassifyRule::new(rule, SampleType::U8);
        let out_info = f.output_information(&[info]).unwrap();
        let out = f.generate(info.largest_region(), &out_info, &[&img], &ExecContext::default()).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let (a, b, c) = (
                    img.get(x, y, 0).unwrap(),
                    img.get(x, y, 1).unwrap(),
                    img.get(x, y, 2).unwrap(),
                );
                let expected = if a <= 60.0 {
                    1
                } else if b > 200.0 {
                    2
                } else if c <= 128.0 {
                    3
                } else {
                    4
                };
                assert_eq!(out.get(x, y, 0).unwrap(), expected as f64);
            }
        }
    }

    #[test]
    fn labels_must_fit_output_and_bands_exist() {
        let info = ImageInfo::new(2, 2, 1, SampleType::U8);
        let big = DecisionRule::new(vec![], Some(300)).unwrap();
        assert!(ClassifyRule::new(big, SampleType::U8).output_information(&[info]).is_err());
        let far = DecisionRule::new(vec![stump(3, 0.0, Some(1), Some(2))], None).unwrap();
        assert!(ClassifyRule::new(far, SampleType::U8).output_information(&[info]).is_err());
    }
}
