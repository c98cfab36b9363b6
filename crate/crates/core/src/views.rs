//! Direction-tagged multi-view image sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Direction};
use crate::error::{Error, Result};
use crate::image::{save_png, Image};

/// Six views of one subject, colors (and optionally normals) in canonical
/// direction order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewBatch {
    pub subject_id: String,
    pub directions: Vec<Direction>,
    pub colors: Vec<Image>,
    pub normals: Option<Vec<Image>>,
    pub cameras: Vec<Camera>,
}

impl MultiViewBatch {
    pub fn new(subject_id: impl Into<String>, colors: Vec<Image>, normals: Option<Vec<Image>>) -> Result<Self> {
        let batch = Self {
            subject_id: subject_id.into(),
            directions: Direction::ALL.to_vec(),
            cameras: Direction::ALL.iter().map(|d| d.camera()).collect(),
            colors,
            normals,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Tags must be the canonical six, each once, in canonical order; normal
    /// maps, when present, must hold unit vectors.
    pub fn validate(&self) -> Result<()> {
        for d in Direction::ALL {
            let count = self.directions.iter().filter(|&&x| x == d).count();
            if count != 1 {
                return Err(Error::MissingDirection(format!(
                    "direction `{d}` appears {count} times"
                )));
            }
        }
        if self.directions != Direction::ALL {
            return Err(Error::InvalidArgument(
                "views must be in canonical direction order".into(),
            ));
        }
        if self.colors.len() != 6 || self.cameras.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "expected 6 views, got {} colors / {} cameras",
                self.colors.len(),
                self.cameras.len()
            )));
        }
        let dim = self.colors[0].dim();
        if self.colors.iter().any(|c| c.dim() != dim || c.dim().0 != 3) {
            return Err(Error::InvalidArgument("views differ in shape".into()));
        }
        if let Some(ns) = &self.normals {
            if ns.len() != 6 || ns.iter().any(|n| n.dim() != dim) {
                return Err(Error::InvalidArgument("normal maps do not match views".into()));
            }
            for n in ns {
                let (_, h, w) = n.dim();
                for i in 0..h {
                    for j in 0..w {
                        let l = (n[[0, i, j]].powi(2) + n[[1, i, j]].powi(2) + n[[2, i, j]].powi(2)).sqrt();
                        if (l - 1.0).abs() > 1e-3 {
                            return Err(Error::InvalidArgument(format!(
                                "normal map pixel ({i},{j}) has norm {l}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn view(&self, d: Direction) -> &Image {
        &self.colors[d.index()]
    }

    pub fn image_size(&self) -> usize {
        self.colors[0].dim().1
    }

    /// Writes `<stem>_<direction>.png` (and `_normal` maps) into `dir`.
    pub fn save_pngs(&self, dir: impl AsRef<Path>, stem: &str) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for (d, img) in self.directions.iter().zip(&self.colors) {
            let p = dir.join(format!("{stem}_{d}.png"));
            save_png(img, &p)?;
            out.push(p);
        }
        if let Some(ns) = &self.normals {
            for (d, img) in self.directions.iter().zip(ns) {
                let p = dir.join(format!("{stem}_{d}_normal.png"));
                save_png(img, &p)?;
                out.push(p);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn colors() -> Vec<Image> {
        vec![Array3::zeros((3, 4, 4)); 6]
    }

    #[test]
    fn tag_contract() {
        let mut b = MultiViewBatch::new("s", colors(), None).unwrap();
        assert_eq!(b.directions, Direction::ALL);
        b.directions[5] = Direction::Front;
        assert!(matches!(b.validate(), Err(Error::MissingDirection(_))));
    }

    #[test]
    fn normals_must_be_unit() {
        let mut n = Array3::zeros((3, 4, 4));
        n.index_axis_mut(ndarray::Axis(0), 2).fill(1.0);
        assert!(MultiViewBatch::new("s", colors(), Some(vec![n.clone(); 6])).is_ok());
        n[[2, 1, 1]] = 0.5;
        assert!(MultiViewBatch::new("s", colors(), Some(vec![n; 6])).is_err());
    }
}
