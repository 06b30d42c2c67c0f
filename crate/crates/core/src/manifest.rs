//! Plain-text dataset manifest.
//!
//! ```text
//! maskseg-manifest 1
//! state raw
//! structures stem,left_eye,right_eye
//! subject train train-000 1234 train-000_ct.mvol train-000_labels.mvol train-000_mask.mvol
//! ```
//!
//! Paths are relative to the manifest's directory. `state processed` marks
//! volumes that went through preprocessing (intensities in `[0, 1]`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;

pub const FILE_NAME: &str = "manifest.txt";
const HEADER: &str = "maskseg-manifest 1";
const WHAT: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::parse(
                WHAT,
                format!("unknown split {s:?} (train, val, test)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum State {
    Raw,
    Processed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: String,
    pub seed: u64,
    pub ct: PathBuf,
    pub labels: PathBuf,
    pub mask: PathBuf,
}

impl ManifestEntry {
    pub fn for_subject(split: Split, id: &str, seed: u64) -> Self {
        Self {
            split,
            id: id.to_string(),
            seed,
            ct: format!("{id}_ct.mvol").into(),
            labels: format!("{id}_labels.mvol").into(),
            mask: format!("{id}_mask.mvol").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub state: State,
    pub structures: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

fn plain_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == ',')
}

impl Manifest {
    pub fn new(state: State, structures: Vec<String>) -> Self {
        Self {
            state,
            structures,
            entries: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(
            s,
            "state {}",
            if self.state == State::Raw {
                "raw"
            } else {
                "processed"
            }
        );
        let _ = writeln!(s, "structures {}", self.structures.join(","));
        for e in &self.entries {
            let _ = writeln!(
                s,
                "subject {} {} {} {} {} {}",
                e.split.name(),
                e.id,
                e.seed,
                e.ct.display(),
                e.labels.display(),
                e.mask.display()
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let bad = |n: usize, msg: &str| Error::parse(WHAT, format!("line {}: {msg}", n + 1));
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(Error::parse(WHAT, format!("first line must be {HEADER:?}"))),
        }
        let state = match lines
            .next()
            .map(|(n, l)| (n, l.split_whitespace().collect::<Vec<_>>()))
        {
            Some((_, v)) if v == ["state", "raw"] => State::Raw,
            Some((_, v)) if v == ["state", "processed"] => State::Processed,
            Some((n, _)) => return Err(bad(n, "expected `state raw|processed`")),
            None => return Err(Error::parse(WHAT, "missing state line")),
        };
        let structures: Vec<String> = match lines.next() {
            Some((n, l)) => {
                let rest = l
                    .trim()
                    .strip_prefix("structures ")
                    .ok_or_else(|| bad(n, "expected `structures`"))?;
                let names: Vec<String> = rest
                    .trim()
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .collect();
                if names.iter().any(|s| !plain_token(s)) {
                    return Err(bad(n, "structure names must be non-empty without spaces"));
                }
                names
            }
            None => return Err(Error::parse(WHAT, "missing structures line")),
        };
        let mut m = Manifest::new(state, structures);
        let mut ids = std::collections::HashSet::new();
        for (n, l) in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            let ["subject", split, id, seed, ct, labels, mask] = f[..] else {
                return Err(bad(n, "expected `subject split id seed ct labels mask`"));
            };
            if !ids.insert(id.to_string()) {
                return Err(bad(n, "duplicate subject id"));
            }
            m.entries.push(ManifestEntry {
                split: split.parse()?,
                id: id.to_string(),
                seed: seed.parse().map_err(|_| bad(n, "bad seed"))?,
                ct: ct.into(),
                labels: labels.into(),
                mask: mask.into(),
            });
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_text().as_bytes())
    }
}
