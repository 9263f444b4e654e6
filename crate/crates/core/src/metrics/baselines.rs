//! Reference models with no learned parameters.

use crate::error::Result;
use crate::grid::Raster;
use crate::metrics::{InfillModel, ModelInput, PredictionGrid};

/// Returns visible inputs unchanged; masked and absent cells get 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CopyInput;

impl InfillModel for CopyInput {
    fn name(&self) -> String {
        "copy-input".into()
    }

    fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
        let m = &input.minerals;
        let probs = m.data.iter().map(|&v| if v == 1 { 1.0 } else { 0.0 }).collect();
        Ok(PredictionGrid { probs: Raster::from_vec(m.channels, m.side, probs)? })
    }
}

/// Same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f32);

impl InfillModel for Constant {
    fn name(&self) -> String {
        format!("constant-{}", self.0)
    }

    fn predict(&self, input: &ModelInput) -> Result<PredictionGrid> {
        Ok(PredictionGrid::constant(input.minerals.channels, input.minerals.side, self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ContextWindow, GeoPoint, WindowSpec};
    use crate::masking::Mask;

    #[test]
    fn copy_hides_masked_cells() {
        let mut w = ContextWindow::empty(WindowSpec::new(GeoPoint::new(-117.0, 41.0), 3, 1.0));
        w.minerals.data[0] = 1;
        w.minerals.data[9] = 1;
        let mut flags = [false; 10];
        flags[1] = true;
        let p = CopyInput.predict(&ModelInput::new(&w, &Mask::layers(3, &flags)).unwrap()).unwrap();
        assert_eq!(p.probs.data[0], 1.0);
        assert_eq!(p.probs.data[9], 0.0);
        assert!(Constant(0.25).predict(&ModelInput::new(&w, &Mask::empty(10, 3)).unwrap()).unwrap().probs.data.iter().all(|&v| v == 0.25));
    }
}
