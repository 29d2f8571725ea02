//! Split manifests: a UTF-8 CSV with header `class,split,path`, one row per image.
//!
//! Relative paths are resolved against the manifest's directory. A row with an
//! empty `path` declares a class without contributing an example; a class that
//! ends up with no examples is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::image::Image;
use super::ClassSection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Val,
    Novel,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Base, Split::Val, Split::Novel];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Val => "val",
            Split::Novel => "novel",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "base" => Ok(Split::Base),
            "val" | "validation" => Ok(Split::Val),
            "novel" => Ok(Split::Novel),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitManifest {
    pub base_classes: Vec<String>,
    pub validation_classes: Vec<String>,
    pub novel_classes: Vec<String>,
    pub records: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    class: String,
    split: String,
    path: String,
}

impl SplitManifest {
    pub fn classes(&self, split: Split) -> &[String] {
        match split {
            Split::Base => &self.base_classes,
            Split::Val => &self.validation_classes,
            Split::Novel => &self.novel_classes,
        }
    }

    fn classes_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Base => &mut self.base_classes,
            Split::Val => &mut self.validation_classes,
            Split::Novel => &mut self.novel_classes,
        }
    }

    pub fn split_of(&self, class: &str) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|&s| self.classes(s).iter().any(|c| c == class))
    }

    /// Checks pairwise disjointness and that every class has an example.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for split in Split::ALL {
            for class in self.classes(split) {
                if let Some(prev) = seen.insert(class, split) {
                    return Err(Error::OverlappingSplits {
                        class: class.clone(),
                        first: prev.to_string(),
                        second: split.to_string(),
                    });
                }
                if self.records.get(class).is_none_or(|r| r.is_empty()) {
                    return Err(Error::EmptyClass(class.clone()));
                }
            }
        }
        Ok(())
    }

    /// Parses manifest rows; `base_dir` anchors relative paths.
    pub fn from_reader<R: std::io::Read>(reader: R, base_dir: &Path, origin: &Path) -> Result<Self> {
        let malformed = |message: String| Error::Manifest {
            path: origin.to_path_buf(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["class", "split", "path"] {
            return Err(malformed(format!(
                "expected header `class,split,path`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut manifest = SplitManifest::default();
        let mut class_split: BTreeMap<String, Split> = BTreeMap::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| malformed(format!("malformed row at line {line}: {e}")))?;
            if row.class.is_empty() {
                return Err(malformed(format!("malformed row at line {line}: empty class")));
            }
            let split: Split = row
                .split
                .parse()
                .map_err(|e| malformed(format!("malformed row at line {line}: {e}")))?;
            match class_split.get(&row.class) {
                Some(&prev) if prev != split => {
                    return Err(Error::OverlappingSplits {
                        class: row.class,
                        first: prev.to_string(),
                        second: split.to_string(),
                    })
                }
                Some(_) => {}
                None => {
                    class_split.insert(row.class.clone(), split);
                    manifest.classes_mut(split).push(row.class.clone());
                    manifest.records.entry(row.class.clone()).or_default();
                }
            }
            if !row.path.is_empty() {
                let p = PathBuf::from(&row.path);
                let p = if p.is_absolute() { p } else { base_dir.join(p) };
                manifest.records.get_mut(&row.class).expect("inserted above").push(p);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the manifest with paths made relative to `base_dir` where possible.
    pub fn to_writer<W: std::io::Write>(&self, writer: W, base_dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for split in Split::ALL {
            for class in self.classes(split) {
                for p in self.records.get(class).into_iter().flatten() {
                    let rel = p.strip_prefix(base_dir).unwrap_or(p);
                    w.serialize(Row {
                        class: class.clone(),
                        split: split.to_string(),
                        path: rel.to_string_lossy().replace('\\', "/"),
                    })?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(base_dir, e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.to_writer(file, base)
    }

    /// Cross-domain layout: base classes from `source`, validation and novel
    /// classes from `target`.
    pub fn cross_domain(source: &SplitManifest, target: &SplitManifest) -> Result<Self> {
        let mut out = SplitManifest::default();
        for class in source.classes(Split::Base) {
            out.base_classes.push(class.clone());
            out.records.insert(class.clone(), source.records[class].clone());
        }
        for split in [Split::Val, Split::Novel] {
            for class in target.classes(split) {
                out.classes_mut(split).push(class.clone());
                out.records.insert(class.clone(), target.records[class].clone());
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Decodes every image of one split.
    pub fn load_section(&self, split: Split) -> Result<ClassSection<Arc<Image>>> {
        self.classes(split)
            .iter()
            .map(|class| {
                let images = self.records[class]
                    .iter()
                    .map(|p| Image::load(p).map(Arc::new))
                    .collect::<Result<Vec<_>>>()?;
                Ok((class.clone(), images))
            })
            .collect()
    }
}

pub fn load_split_manifest(path: &Path) -> Result<SplitManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    SplitManifest::from_reader(file, base, path)
}
