//! COCO-style JSON documents: annotation datasets and detection results.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    pub categories: Vec<CocoCategory>,
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

impl CocoResult {
    pub fn bbox(&self) -> Result<BBox> {
        xywh_box(&self.bbox, "results bbox")
    }
}

impl CocoAnnotation {
    pub fn bbox(&self) -> Result<BBox> {
        xywh_box(&self.bbox, "annotation bbox")
    }
}

pub(crate) fn xywh_box(v: &[f64; 4], ctx: &str) -> Result<BBox> {
    BBox::from_xywh(v[0], v[1], v[2], v[3])
        .map_err(|e| Error::parse(ctx, format!("{v:?}: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let context = if field == "." { path.display().to_string() } else { format!("{} at {field}", path.display()) };
        Error::parse(context, e.into_inner().to_string())
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_results_and_dataset() {
        let r: Vec<CocoResult> = serde_json::from_str(
            r#"[{"image_id": 3, "category_id": 1, "bbox": [1, 2, 3, 4], "score": 0.5}]"#,
        )
        .unwrap();
        assert_eq!(r[0].bbox().unwrap(), BBox::new(1.0, 2.0, 4.0, 6.0).unwrap());

        let d: CocoDataset = serde_json::from_str(
            r#"{"images": [{"id": 1, "width": 10, "height": 10}],
                "annotations": [{"id": 1, "image_id": 1, "category_id": 0, "bbox": [0, 0, 5, 5]}]}"#,
        )
        .unwrap();
        assert_eq!(d.annotations[0].iscrowd, 0);
        assert!(d.categories.is_empty());
    }

    #[test]
    fn missing_field_is_named() {
        let err = serde_json::from_str::<CocoResult>(r#"{"image_id": 1, "bbox": [0,0,1,1], "score": 1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("category_id"));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let r = CocoResult {
            image_id: 0,
            category_id: 0,
            bbox: [0.0, 0.0, 0.0, 3.0],
            score: 1.0,
        };
        assert!(r.bbox().is_err());
    }
}
