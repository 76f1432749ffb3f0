//! Line-delimited JSON annotation files.
//!
//! One frame per line:
//!
//! ```text
//! {"frame":0,"objects":[{"class":"car","box":[0.1,0.2,0.3,0.4],"track":7,"attrs":{"color":"red"},"score":0.9}]}
//! ```
//!
//! `track`, `attrs` and `score` are optional. Frames must appear in strictly
//! ascending `frame` order. Blank lines are ignored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BBox, ClassTable, FrameAnnotation, ObjectInstance};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame: u64,
    #[serde(default)]
    objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    class: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

/// Streaming reader over annotation lines.
pub struct AnnotationReader<R> {
    source: R,
    path: PathBuf,
    classes: ClassTable,
    line: usize,
    last_frame: Option<u64>,
    buf: String,
}

impl<R: BufRead> AnnotationReader<R> {
    /// `path` only labels error messages.
    pub fn new(source: R, path: impl Into<PathBuf>, classes: ClassTable) -> Self {
        Self { source, path: path.into(), classes, line: 0, last_frame: None, buf: String::new() }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Annotation { path: self.path.clone(), line: self.line, message: message.into() }
    }

    fn decode(&self, text: &str) -> Result<FrameAnnotation> {
        let rec: FrameRecord = serde_json::from_str(text).map_err(|e| self.error(e.to_string()))?;
        let mut objects = Vec::with_capacity(rec.objects.len());
        for o in rec.objects {
            let class_id = self.classes.id(&o.class).ok_or_else(|| self.error(format!("unknown class `{}`", o.class)))?;
            let bbox = BBox::try_from(o.bbox).map_err(|e| self.error(e.to_string()))?;
            let mut inst = ObjectInstance::new(class_id, bbox);
            inst.track_id = o.track;
            inst.attrs = o.attrs;
            if let Some(s) = o.score {
                inst = inst.with_score(s).map_err(|e| self.error(e.to_string()))?;
            }
            objects.push(inst);
        }
        if let Some(prev) = self.last_frame {
            if rec.frame <= prev {
                return Err(self.error(format!("frame {} follows frame {prev}; frames must ascend", rec.frame)));
            }
        }
        Ok(FrameAnnotation::new(rec.frame, objects))
    }
}

impl<R: BufRead> Iterator for AnnotationReader<R> {
    type Item = Result<FrameAnnotation>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.source.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
            let text = self.buf.trim();
            if text.is_empty() {
                continue;
            }
            let out = self.decode(text);
            if let Ok(f) = &out {
                self.last_frame = Some(f.frame_id);
            }
            return Some(out);
        }
    }
}

pub fn open_annotations(path: &Path, classes: &ClassTable) -> Result<AnnotationReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(AnnotationReader::new(BufReader::new(file), path, classes.clone()))
}

pub fn read_annotations(path: &Path, classes: &ClassTable) -> Result<Vec<FrameAnnotation>> {
    open_annotations(path, classes)?.collect()
}

/// Serializes one frame as a single line without the trailing newline.
pub fn frame_to_line(frame: &FrameAnnotation, classes: &ClassTable) -> Result<String> {
    let objects = frame
        .objects
        .iter()
        .map(|o| {
            let class = classes
                .label(o.class_id)
                .ok_or(Error::UnknownClassId { id: o.class_id.0, n_classes: classes.len() })?;
            Ok(ObjectRecord {
                class: class.to_string(),
                bbox: o.bbox.as_array(),
                track: o.track_id,
                attrs: o.attrs.clone(),
                score: o.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rec = FrameRecord { frame: frame.frame_id, objects };
    Ok(serde_json::to_string(&rec).expect("annotation records always serialize"))
}

pub fn write_annotations_to<W: Write + ?Sized>(out: &mut W, frames: &[FrameAnnotation], classes: &ClassTable) -> Result<()> {
    for f in frames {
        let line = frame_to_line(f, classes)?;
        writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

pub fn write_annotations(path: &Path, frames: &[FrameAnnotation], classes: &ClassTable) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_annotations_to(&mut w, frames, classes).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}
