use std::path::Path;

use super::{ClassTable, SampleDesc};
use crate::error::{Error, Result};
use crate::head::{BBox, GroundTruth};

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: Option<String>,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<GroundTruth>,
    /// Object names not in the class table.
    pub skipped: Vec<String>,
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn text_of(node: roxmltree::Node<'_, '_>, name: &str) -> Option<String> {
    child(node, name).and_then(|n| n.text()).map(|t| t.trim().to_string())
}

fn number(node: roxmltree::Node<'_, '_>, name: &str) -> Result<f32> {
    let t = text_of(node, name).ok_or_else(|| Error::Dataset(format!("missing <{name}>")))?;
    t.parse::<f32>()
        .map_err(|_| Error::Dataset(format!("<{name}> is not a number: `{t}`")))
}

/// Parses the VOC annotation subset: `size/{width,height}` and
/// `object/{name, bndbox/{xmin,ymin,xmax,ymax}}`. Pixel corners become
/// normalized centre-size boxes; objects whose name is not in `classes` are
/// skipped with a warning.
pub fn parse_voc_xml(xml: &str, classes: &ClassTable) -> Result<VocAnnotation> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Dataset(format!("xml: {e}")))?;
    let root = doc.root_element();
    let size = child(root, "size").ok_or_else(|| Error::Dataset("missing <size> element".into()))?;
    let width = number(size, "width")?;
    let height = number(size, "height")?;
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::Dataset(format!("image size {width}x{height} must be positive")));
    }

    let mut boxes = Vec::new();
    let mut skipped = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = text_of(obj, "name").ok_or_else(|| Error::Dataset("<object> without <name>".into()))?;
        let bb = child(obj, "bndbox").ok_or_else(|| Error::Dataset(format!("object `{name}` has no <bndbox>")))?;
        let (x0, y0, x1, y1) = (number(bb, "xmin")?, number(bb, "ymin")?, number(bb, "xmax")?, number(bb, "ymax")?);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Dataset(format!(
                "object `{name}`: degenerate box ({x0},{y0})-({x1},{y1})"
            )));
        }
        let Some(class_id) = classes.id(&name) else {
            log::warn!("skipping object `{name}`: not in class table");
            skipped.push(name);
            continue;
        };
        let clamp = |v: f32, hi: f32| v.clamp(0.0, hi);
        let bbox = BBox::from_corners(clamp(x0, width), clamp(y0, height), clamp(x1, width), clamp(y1, height), width, height);
        if !bbox.is_valid() {
            return Err(Error::Dataset(format!("object `{name}` lies outside the image")));
        }
        boxes.push(GroundTruth { bbox, class_id });
    }

    Ok(VocAnnotation {
        filename: text_of(root, "filename"),
        width: width as u32,
        height: height as u32,
        boxes,
        skipped,
    })
}

/// Reads a VOC-layout directory: every `Annotations/*.xml` (sorted by file
/// name) paired with its image in `JPEGImages/`. Images without a known
/// object are kept with an empty box list.
pub fn load_voc_dir(dir: impl AsRef<Path>, classes: &ClassTable) -> Result<Vec<SampleDesc>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir.join("Annotations"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "xml"));
    files.sort();
    files
        .iter()
        .map(|path| {
            let text = std::fs::read_to_string(path)?;
            let ann = parse_voc_xml(&text, classes).map_err(|e| Error::Annotation {
                path: path.clone(),
                line: 1,
                message: e.to_string(),
            })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let image = ann.filename.clone().unwrap_or_else(|| format!("{stem}.jpg"));
            Ok(SampleDesc {
                image: dir.join("JPEGImages").join(image),
                boxes: ann.boxes,
                source_id: stem,
            })
        })
        .collect()
}
