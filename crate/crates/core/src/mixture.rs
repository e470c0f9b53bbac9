//! Components and mixtures of linear templates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::hog::HOG_CHANNELS;
use crate::learn::LearnParams;

/// Where a component's training samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Provenance {
    SourceDataset,
    InSitu,
}

/// Borrowed `rows × cols × 31` weight tensor.
#[derive(Debug, Clone, Copy)]
pub struct TemplateView<'a> {
    pub rows: usize,
    pub cols: usize,
    pub weights: &'a [f64],
}

impl<'a> TemplateView<'a> {
    pub fn new(rows: usize, cols: usize, weights: &'a [f64]) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols * HOG_CHANNELS {
            return Err(Error::Size(format!(
                "{rows}x{cols} template needs {} weights, got {}",
                rows * cols * HOG_CHANNELS,
                weights.len()
            )));
        }
        Ok(TemplateView { rows, cols, weights })
    }
}

/// One linear template `wᵀx + b`; detections need `wᵀx − bias ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub provenance: Provenance,
    pub sample_count: usize,
}

impl Component {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, provenance: Provenance, sample_count: usize) -> Result<Self> {
        TemplateView::new(rows, cols, &weights)?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("component weights must be finite".into()));
        }
        Ok(Component { rows, cols, weights, bias: 0.0, provenance, sample_count })
    }

    pub fn template(&self) -> TemplateView<'_> {
        TemplateView { rows: self.rows, cols: self.cols, weights: &self.weights }
    }
}

/// Ordered components for one object class. The score at a location is
/// the maximum over components.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub class_name: String,
    pub cell_size: usize,
    pub components: Vec<Component>,
    pub params: LearnParams,
    /// Set when components were added or removed since the biases were last
    /// optimized jointly.
    pub biases_stale: bool,
}

impl Mixture {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn biases(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.bias).collect()
    }

    pub fn set_biases(&mut self, biases: &[f64]) -> Result<()> {
        if biases.len() != self.components.len() {
            return Err(Error::Size(format!(
                "{} biases for {} components",
                biases.len(),
                self.components.len()
            )));
        }
        if biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("biases must be finite".into()));
        }
        for (c, &b) in self.components.iter_mut().zip(biases) {
            c.bias = b;
        }
        self.biases_stale = false;
        Ok(())
    }

    /// Smallest template extent over all components, `(rows, cols)`.
    pub fn min_template(&self) -> (usize, usize) {
        let rows = self.components.iter().map(|c| c.rows).min().unwrap_or(1);
        let cols = self.components.iter().map(|c| c.cols).min().unwrap_or(1);
        (rows, cols)
    }

    /// Copy of the mixture without component `index`; biases are flagged
    /// for re-optimization.
    pub fn remove_component(&self, index: usize) -> Result<Mixture> {
        if index >= self.components.len() {
            return Err(Error::Index { index, len: self.components.len() });
        }
        if self.components.len() == 1 {
            return Err(Error::LastComponent);
        }
        let mut out = self.clone();
        out.components.remove(index);
        out.biases_stale = true;
        Ok(out)
    }

    /// Append components, keeping existing ones untouched.
    pub fn append(&self, components: impl IntoIterator<Item = Component>) -> Mixture {
        let mut out = self.clone();
        out.components.extend(components);
        out.biases_stale = true;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mixture(n: usize) -> Mixture {
        let components = (0..n)
            .map(|i| Component::new(1, 1, vec![i as f64; HOG_CHANNELS], Provenance::SourceDataset, 1).unwrap())
            .collect();
        Mixture {
            class_name: "thing".into(),
            cell_size: 8,
            components,
            params: LearnParams::default(),
            biases_stale: false,
        }
    }

    #[test]
    fn remove_keeps_order() {
        let m = mixture(3).remove_component(1).unwrap();
        assert_eq!(m.components[0].weights[0], 0.0);
        assert_eq!(m.components[1].weights[0], 2.0);
        assert!(m.biases_stale);
    }

    #[test]
    fn remove_errors() {
        assert_eq!(mixture(1).remove_component(0), Err(Error::LastComponent));
        assert_eq!(mixture(2).remove_component(2), Err(Error::Index { index: 2, len: 2 }));
    }

    #[test]
    fn template_view_checks_shape() {
        assert!(TemplateView::new(2, 2, &[0.0; 10]).is_err());
        assert!(TemplateView::new(1, 1, &[0.0; HOG_CHANNELS]).is_ok());
    }
}
