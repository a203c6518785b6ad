use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SampleDesc;
use crate::error::{Error, Result};
use crate::head::{BBox, GroundTruth};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonBox {
    class: usize,
    cx: f32,
    cy: f32,
    w: f32,
    h: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonSample {
    image: String,
    boxes: Vec<JsonBox>,
}

/// Reads one JSON object per line:
/// `{"image": "...", "boxes": [{"class": 0, "cx": .., "cy": .., "w": .., "h": ..}]}`.
/// Image paths are resolved against the file's directory. Blank lines are
/// skipped.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<SampleDesc>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let fail = |line: usize, message: String| Error::Annotation {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonSample = serde_json::from_str(line).map_err(|e| fail(lineno, e.to_string()))?;
        let boxes = raw
            .boxes
            .iter()
            .map(|b| {
                BBox::new(b.cx, b.cy, b.w, b.h)
                    .map(|bbox| GroundTruth {
                        bbox,
                        class_id: b.class,
                    })
                    .map_err(|e| fail(lineno, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let image = PathBuf::from(&raw.image);
        out.push(SampleDesc {
            image: if image.is_absolute() { image } else { base.join(image) },
            boxes,
            source_id: raw.image,
        });
    }
    Ok(out)
}

/// Writes descriptors in the format [`load_jsonl`] reads. `image` fields are
/// written relative to `relative_to` when possible.
pub fn write_jsonl(path: impl AsRef<Path>, samples: &[SampleDesc], relative_to: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let image = s.image.strip_prefix(relative_to).unwrap_or(&s.image);
        let record = JsonSample {
            image: image.to_string_lossy().replace('\\', "/"),
            boxes: s
                .boxes
                .iter()
                .map(|g| JsonBox {
                    class: g.class_id,
                    cx: g.bbox.cx,
                    cy: g.bbox.cy,
                    w: g.bbox.w,
                    h: g.bbox.h,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::Dataset(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.jsonl");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn empty_file_is_empty() {
        let (_d, p) = write("");
        assert!(load_jsonl(&p).unwrap().is_empty());
    }

    #[test]
    fn one_line_one_sample() {
        let (d, p) = write(r#"{"image": "a.png", "boxes": [{"class": 0, "cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.3}]}"#);
        let v = load_jsonl(&p).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].image, d.path().join("a.png"));
        assert_eq!(v[0].boxes[0].bbox.h, 0.3);
    }

    #[test]
    fn out_of_range_reports_line() {
        let text = "\n{\"image\": \"a.png\", \"boxes\": []}\n{\"image\": \"b.png\", \"boxes\": [{\"class\": 0, \"cx\": 1.5, \"cy\": 0.5, \"w\": 0.2, \"h\": 0.3}]}\n";
        let (_d, p) = write(text);
        match load_jsonl(&p) {
            Err(Error::Annotation { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let (_d, p) = write("{not json}\n");
        assert!(matches!(load_jsonl(&p), Err(Error::Annotation { line: 1, .. })));
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![SampleDesc {
            image: dir.path().join("img/0.png"),
            boxes: vec![GroundTruth {
                bbox: BBox::new(0.25, 0.75, 0.125, 0.5).unwrap(),
                class_id: 2,
            }],
            source_id: "img/0.png".into(),
        }];
        let p = dir.path().join("a.jsonl");
        write_jsonl(&p, &samples, dir.path()).unwrap();
        assert_eq!(load_jsonl(&p).unwrap(), samples);
    }
}
