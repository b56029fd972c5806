use crate::config::{ConfigDoc, Section};
use crate::error::{Error, Result};
use crate::tensor::kernels::effective_width;

pub const SECTION: &str = "model";

/// Architecture hyperparameters of a U-Time model.
#[derive(Clone, Debug, PartialEq)]
pub struct UTimeConfig {
    pub in_channels: usize,
    pub classes: usize,
    /// Samples per output segment at the default segmentation frequency.
    pub segment_samples: usize,
    pub depth: usize,
    pub pool_windows: Vec<usize>,
    /// Filters at the top level; doubled at every level below.
    pub base_filters: usize,
    pub kernel_width: usize,
    /// Dilation of the encoder convolutions. Decoder convolutions are undilated.
    pub dilation: usize,
    /// Kernel widths of the convolution following each up-sampling, bottom first.
    pub decoder_kernels: Vec<usize>,
    /// Segments per training window.
    pub transition_window: usize,
    /// Width of the segment-classifier convolution.
    pub classifier_kernel: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for UTimeConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            classes: 5,
            segment_samples: 3000,
            depth: 4,
            pool_windows: vec![10, 8, 6, 4],
            base_filters: 16,
            kernel_width: 5,
            dilation: 2,
            decoder_kernels: vec![4, 6, 8, 10],
            transition_window: 35,
            classifier_kernel: 1,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }
}

const KEYS: [&str; 13] = [
    "in_channels",
    "classes",
    "segment_samples",
    "depth",
    "pool_windows",
    "base_filters",
    "kernel_width",
    "dilation",
    "decoder_kernels",
    "transition_window",
    "classifier_kernel",
    "bn_momentum",
    "bn_epsilon",
];

impl UTimeConfig {
    /// Minimum input length for which every pooling stage is defined.
    pub fn t_min(&self) -> usize {
        self.pool_windows.iter().product()
    }

    /// Filters of encoder level `d` (`d == depth` is the bottom block).
    pub fn filters(&self, d: usize) -> usize {
        self.base_filters << d
    }

    /// Input samples per training window.
    pub fn window_samples(&self) -> usize {
        self.transition_window * self.segment_samples
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("classes", self.classes),
            ("segment_samples", self.segment_samples),
            ("depth", self.depth),
            ("base_filters", self.base_filters),
            ("kernel_width", self.kernel_width),
            ("dilation", self.dilation),
            ("transition_window", self.transition_window),
            ("classifier_kernel", self.classifier_kernel),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.pool_windows.len() != self.depth {
            return fail(format!(
                "len(pool_windows) = {} but depth = {}",
                self.pool_windows.len(),
                self.depth
            ));
        }
        if self.decoder_kernels.len() != self.depth {
            return fail(format!(
                "len(decoder_kernels) = {} but depth = {}",
                self.decoder_kernels.len(),
                self.depth
            ));
        }
        if let Some(w) = self.pool_windows.iter().find(|&&w| w < 2) {
            return fail(format!("pool window {w} must be at least 2"));
        }
        for (j, &k) in self.decoder_kernels.iter().enumerate() {
            let factor = self.pool_windows[self.depth - 1 - j];
            if k != factor {
                return fail(format!(
                    "decoder kernel {j} is {k} but the up-sampling factor at that level is {factor}"
                ));
            }
        }
        if self.base_filters.checked_shl(self.depth as u32).is_none_or(|f| f >> self.depth != self.base_filters) {
            return fail("base_filters overflows at the bottom level".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return fail(format!("bn_momentum {} outside [0, 1)", self.bn_momentum));
        }
        if !(self.bn_epsilon > 0.0 && self.bn_epsilon.is_finite()) {
            return fail(format!("bn_epsilon {} must be positive", self.bn_epsilon));
        }
        Ok(())
    }

    pub fn from_section(s: &Section) -> Result<Self> {
        s.expect_keys(&KEYS)?;
        let mut c = Self::default();
        s.read("in_channels", &mut c.in_channels)?;
        s.read("classes", &mut c.classes)?;
        s.read("segment_samples", &mut c.segment_samples)?;
        s.read("depth", &mut c.depth)?;
        s.read_list("pool_windows", &mut c.pool_windows)?;
        s.read("base_filters", &mut c.base_filters)?;
        s.read("kernel_width", &mut c.kernel_width)?;
        s.read("dilation", &mut c.dilation)?;
        s.read_list("decoder_kernels", &mut c.decoder_kernels)?;
        s.read("transition_window", &mut c.transition_window)?;
        s.read("classifier_kernel", &mut c.classifier_kernel)?;
        s.read("bn_momentum", &mut c.bn_momentum)?;
        s.read("bn_epsilon", &mut c.bn_epsilon)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads the `[model]` section; a missing section yields the defaults.
    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        match doc.section(SECTION) {
            Some(s) => Self::from_section(s),
            None => Ok(Self::default()),
        }
    }

    pub fn to_section(&self) -> Section {
        let mut s = Section::new(SECTION);
        s.set("in_channels", self.in_channels);
        s.set("classes", self.classes);
        s.set("segment_samples", self.segment_samples);
        s.set("depth", self.depth);
        s.set_list("pool_windows", &self.pool_windows);
        s.set("base_filters", self.base_filters);
        s.set("kernel_width", self.kernel_width);
        s.set("dilation", self.dilation);
        s.set_list("decoder_kernels", &self.decoder_kernels);
        s.set("transition_window", self.transition_window);
        s.set("classifier_kernel", self.classifier_kernel);
        s.set("bn_momentum", self.bn_momentum);
        s.set("bn_epsilon", self.bn_epsilon);
        s
    }
}

/// Input span, in samples, that can influence one output of the last
/// encoder convolution (the second convolution of the bottom block).
///
/// Standard composition: each layer adds `(effective_width - 1) * jump`,
/// pooling multiplies the jump by its window.
pub fn receptive_field(c: &UTimeConfig) -> usize {
    let eff = effective_width(c.kernel_width, c.dilation);
    let mut r = 1;
    let mut jump = 1;
    for &w in &c.pool_windows {
        r += 2 * (eff - 1) * jump;
        r += (w - 1) * jump;
        jump *= w;
    }
    r + 2 * (eff - 1) * jump
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_config_is_valid() {
        let c = UTimeConfig::default();
        c.validate().unwrap();
        assert_eq!(c.t_min(), 1920);
        assert_eq!(c.filters(4), 256);
    }

    #[test]
    fn single_conv_receptive_field() {
        assert_eq!(effective_width(5, 2), 9);
        let c = UTimeConfig {
            depth: 0,
            pool_windows: vec![],
            decoder_kernels: vec![],
            ..Default::default()
        };
        // Two stacked width-9 convolutions.
        assert_eq!(receptive_field(&c), 17);
    }

    #[test]
    fn inconsistent_configs_name_the_invariant() {
        let c = UTimeConfig {
            pool_windows: vec![10, 8, 6],
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("pool_windows"));
        let c = UTimeConfig {
            decoder_kernels: vec![10, 8, 6, 4],
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("decoder kernel"));
    }

    #[test]
    fn text_roundtrip() {
        let c = UTimeConfig {
            base_filters: 4,
            in_channels: 3,
            ..Default::default()
        };
        let mut doc = ConfigDoc::default();
        doc.push(c.to_section());
        let back = UTimeConfig::from_doc(&ConfigDoc::parse(&doc.to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
        let bad = ConfigDoc::parse("[model]\nbase_filter = 4\n").unwrap();
        assert!(UTimeConfig::from_doc(&bad).is_err());
    }
}
