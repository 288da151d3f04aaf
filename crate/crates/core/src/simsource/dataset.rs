use std::fs;
use std::path::Path;

use super::{Datasets, Sample, Shape, Split};
use crate::error::{Error, Result};
use crate::pcd::{read_point_cloud, write_point_cloud, Format, SourceLabel};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "path,source,shape,split";

/// Writes `<split>/<source>/<shape>_<index>.pcda` for every sample plus
/// `manifest.csv`, one row per file sorted by path.
pub fn write_dataset(data: &Datasets, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut rows = Vec::new();
    for s in data.all() {
        let rel = format!("{}/{}/{}_{:04}.pcda", s.split.name(), s.source, s.shape, s.index);
        let path = dir.join(&rel);
        let parent = path.parent().expect("relative path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        write_point_cloud(&s.cloud, &path, Format::Pcda)?;
        rows.push(format!("{rel},{},{},{}", s.source, s.shape, s.split.name()));
    }
    rows.sort();
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`]. Sources outside `known`
/// are labelled Unknown.
pub fn read_dataset(dir: impl AsRef<Path>, known: &[String]) -> Result<Datasets> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(parse_error(&path, 1, format!("expected header '{MANIFEST_HEADER}'"))),
    }
    let mut data = Datasets { known_sources: known.to_vec(), train: vec![], validation: vec![], test: vec![] };
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let [rel, source, shape, split] = f[..] else {
            return Err(parse_error(&path, i + 1, "expected 4 fields".into()));
        };
        let shape: Shape = shape.parse().map_err(|e: Error| parse_error(&path, i + 1, e.to_string()))?;
        let split: Split = split.parse().map_err(|e: Error| parse_error(&path, i + 1, e.to_string()))?;
        let index = rel
            .rsplit_once('_')
            .and_then(|(_, tail)| tail.strip_suffix(".pcda"))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| parse_error(&path, i + 1, format!("cannot read the index from '{rel}'")))?;
        let label = match known.iter().position(|k| k == source) {
            Some(j) => SourceLabel::known(j, source),
            None => SourceLabel::Unknown,
        };
        let cloud = read_point_cloud(dir.join(rel), Format::Pcda)?.with_label(label.clone()).with_shape(shape.name());
        let sample = Sample {
            id: format!("{source}/{shape}_{index:04}"),
            source: source.to_string(),
            shape,
            index,
            split,
            label,
            cloud,
        };
        match split {
            Split::Train => data.train.push(sample),
            Split::Validation => data.validation.push(sample),
            Split::Test => data.test.push(sample),
        }
    }
    for set in [&mut data.train, &mut data.validation, &mut data.test] {
        set.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(data)
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse { location: format!("{} line {line}", path.display()), message }
}
