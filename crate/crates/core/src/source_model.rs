//! Target sources as rosters of mutable lines, and line-level patches over
//! them.
//!
//! Edits always address ORIGINAL coordinates, so applying one edit never
//! shifts the lines another edit refers to. Patch text uses 1-based line
//! numbers:
//!
//! ```text
//! Deletion 254, Insertion before 102 of 105, Replacement main.c:7 <- util.c:3
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripPolicy {
    #[default]
    None,
    /// Drop blank lines and full-line `//`, `#` and `/* ... */` comments.
    CommentsAndBlank,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is not valid UTF-8 text")]
    NotText(PathBuf),
    #[error("roster has no mutable lines; there is nothing to search")]
    EmptyRoster,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub lines: Vec<String>,
    pub trailing_newline: bool,
}

/// One line of the roster, 0-based in original coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinePos {
    pub file: usize,
    pub line: usize,
}

impl LinePos {
    pub fn new(file: usize, line: usize) -> Self {
        Self { file, line }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRoster {
    files: Vec<SourceFile>,
    mutable_points: Vec<LinePos>,
    strip_policy: StripPolicy,
}

impl SourceRoster {
    /// Builds a roster where every line is mutable.
    pub fn from_files(files: Vec<SourceFile>, strip_policy: StripPolicy) -> Result<Self, SourceError> {
        let mutable_points: Vec<LinePos> = files
            .iter()
            .enumerate()
            .flat_map(|(f, file)| (0..file.lines.len()).map(move |l| LinePos::new(f, l)))
            .collect();
        if mutable_points.is_empty() {
            return Err(SourceError::EmptyRoster);
        }
        Ok(Self {
            files,
            mutable_points,
            strip_policy,
        })
    }

    /// Convenience constructor for a single in-memory file.
    pub fn from_text(path: &str, text: &str, strip_policy: StripPolicy) -> Result<Self, SourceError> {
        Self::from_files(vec![split_source(path, text, strip_policy)], strip_policy)
    }

    pub fn files(&self) -> &[SourceFile] {
        &self.files
    }

    pub fn mutable_points(&self) -> &[LinePos] {
        &self.mutable_points
    }

    pub fn strip_policy(&self) -> StripPolicy {
        self.strip_policy
    }

    pub fn line(&self, pos: LinePos) -> Option<&str> {
        self.files.get(pos.file)?.lines.get(pos.line).map(String::as_str)
    }

    pub fn contains(&self, pos: LinePos) -> bool {
        self.line(pos).is_some()
    }

    pub fn file_index(&self, name: &str) -> Option<usize> {
        self.files.iter().position(|f| f.path == name)
    }

    /// Sources with no patch applied.
    pub fn original(&self) -> PatchedSource {
        apply_patch(self, &Patch::empty()).expect("empty patch always applies")
    }
}

fn split_source(path: &str, text: &str, strip: StripPolicy) -> SourceFile {
    let text = text.replace("\r\n", "\n");
    let trailing_newline = text.ends_with('\n');
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    if strip == StripPolicy::CommentsAndBlank {
        lines = strip_comments_and_blank(lines);
    }
    SourceFile {
        path: path.to_string(),
        lines,
        trailing_newline,
    }
}

fn strip_comments_and_blank(lines: Vec<String>) -> Vec<String> {
    let mut in_block = false;
    lines
        .into_iter()
        .filter(|line| {
            let t = line.trim();
            if in_block {
                if t.contains("*/") {
                    in_block = false;
                }
                return false;
            }
            if let Some(rest) = t.strip_prefix("/*") {
                in_block = !rest.contains("*/");
                return false;
            }
            !(t.is_empty() || t.starts_with("//") || t.starts_with('#'))
        })
        .collect()
}

/// Reads each file into the roster. LF and CRLF endings are accepted; output
/// always uses LF.
pub fn ingest_source<P: AsRef<Path>>(paths: &[P], strip_policy: StripPolicy) -> Result<SourceRoster, SourceError> {
    let mut files = Vec::with_capacity(paths.len());
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| SourceError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|_| SourceError::NotText(path.to_path_buf()))?;
        files.push(split_source(&path.to_string_lossy(), &text, strip_policy));
    }
    SourceRoster::from_files(files, strip_policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditKind {
    Deletion,
    Insertion,
    Replacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edit {
    Deletion { target: LinePos },
    /// Insert a copy of `source` before `target`.
    Insertion { target: LinePos, source: LinePos },
    /// Overwrite `target` with a copy of `source`.
    Replacement { target: LinePos, source: LinePos },
}

impl Edit {
    pub fn kind(&self) -> EditKind {
        match self {
            Edit::Deletion { .. } => EditKind::Deletion,
            Edit::Insertion { .. } => EditKind::Insertion,
            Edit::Replacement { .. } => EditKind::Replacement,
        }
    }

    pub fn target(&self) -> LinePos {
        match *self {
            Edit::Deletion { target } | Edit::Insertion { target, .. } | Edit::Replacement { target, .. } => target,
        }
    }

    pub fn source(&self) -> Option<LinePos> {
        match *self {
            Edit::Deletion { .. } => None,
            Edit::Insertion { source, .. } | Edit::Replacement { source, .. } => Some(source),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Patch {
    pub edits: Vec<Edit>,
}

impl Patch {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(edits: Vec<Edit>) -> Self {
        Self { edits }
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// The patch with edit `index` removed.
    pub fn without(&self, index: usize) -> Self {
        let mut edits = self.edits.clone();
        edits.remove(index);
        Self { edits }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatchedFile {
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatchedSource {
    pub files: Vec<PatchedFile>,
}

impl PatchedSource {
    /// All files joined in roster order.
    pub fn concatenated(&self) -> String {
        let mut out = String::new();
        for f in &self.files {
            out.push_str(&f.text);
            if !f.text.is_empty() && !f.text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("edit {index} ({edit}) refers to a line outside the roster")]
pub struct ApplyError {
    pub index: usize,
    pub edit: String,
}

/// Applies `patch` to the original sources.
///
/// For each original slot the last Deletion or Replacement in patch order
/// decides its fate; Insertions at the same anchor appear in patch order.
pub fn apply_patch(roster: &SourceRoster, patch: &Patch) -> Result<PatchedSource, ApplyError> {
    #[derive(Clone)]
    enum Slot {
        Keep,
        Delete,
        Replace(LinePos),
    }
    let mut slots: Vec<Vec<Slot>> = roster.files.iter().map(|f| vec![Slot::Keep; f.lines.len()]).collect();
    let mut inserts: Vec<Vec<Vec<LinePos>>> = roster.files.iter().map(|f| vec![Vec::new(); f.lines.len()]).collect();

    for (index, edit) in patch.edits.iter().enumerate() {
        let valid = roster.contains(edit.target()) && edit.source().is_none_or(|s| roster.contains(s));
        if !valid {
            return Err(ApplyError {
                index,
                edit: format!("{edit:?}"),
            });
        }
        let t = edit.target();
        match *edit {
            Edit::Deletion { .. } => slots[t.file][t.line] = Slot::Delete,
            Edit::Replacement { source, .. } => slots[t.file][t.line] = Slot::Replace(source),
            Edit::Insertion { source, .. } => inserts[t.file][t.line].push(source),
        }
    }

    let files = roster
        .files
        .iter()
        .enumerate()
        .map(|(fi, file)| {
            let mut out: Vec<&str> = Vec::with_capacity(file.lines.len());
            for (li, line) in file.lines.iter().enumerate() {
                out.extend(inserts[fi][li].iter().map(|&p| roster.line(p).unwrap_or_default()));
                match slots[fi][li] {
                    Slot::Keep => out.push(line),
                    Slot::Delete => {}
                    Slot::Replace(p) => out.push(roster.line(p).unwrap_or_default()),
                }
            }
            let mut text = out.join("\n");
            if file.trailing_newline && !out.is_empty() {
                text.push('\n');
            }
            PatchedFile {
                path: file.path.clone(),
                text,
            }
        })
        .collect();
    Ok(PatchedSource { files })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PatchParseError {
    #[error("item {position}: cannot parse `{item}`")]
    Malformed { position: usize, item: String },
    #[error("item {position}: unknown file `{file}`")]
    UnknownFile { position: usize, file: String },
    #[error("item {position}: a file name is required when the target has several files")]
    FileRequired { position: usize },
}

/// Parses canonical patch text against `roster` (needed to resolve file
/// names). Items are comma separated; `<file>:` may be omitted for
/// single-file targets.
pub fn parse_patch(text: &str, roster: &SourceRoster) -> Result<Patch, PatchParseError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Patch::empty());
    }
    let mut edits = Vec::new();
    for (i, item) in text.split(',').enumerate() {
        let position = i + 1;
        let item = item.trim();
        let malformed = || PatchParseError::Malformed {
            position,
            item: item.to_string(),
        };
        let words: Vec<&str> = item.split_whitespace().collect();
        let coord = |s: &str| resolve_coord(s, roster, position).and_then(|c| c.ok_or_else(malformed));
        let edit = match words[..] {
            ["Deletion", t] => Edit::Deletion { target: coord(t)? },
            ["Insertion", "before", t, "of", s] => Edit::Insertion {
                target: coord(t)?,
                source: coord(s)?,
            },
            ["Replacement", t, "<-", s] => Edit::Replacement {
                target: coord(t)?,
                source: coord(s)?,
            },
            _ => return Err(malformed()),
        };
        edits.push(edit);
    }
    Ok(Patch { edits })
}

/// `Ok(None)` means the text is not a coordinate at all.
fn resolve_coord(s: &str, roster: &SourceRoster, position: usize) -> Result<Option<LinePos>, PatchParseError> {
    let (file, number) = match s.rsplit_once(':') {
        Some((f, n)) => (Some(f), n),
        None => (None, s),
    };
    let Ok(number) = number.parse::<usize>() else {
        return Ok(None);
    };
    if number == 0 {
        return Ok(None);
    }
    let file = match file {
        Some(name) => roster.file_index(name).ok_or_else(|| PatchParseError::UnknownFile {
            position,
            file: name.to_string(),
        })?,
        None if roster.files.len() == 1 => 0,
        None => return Err(PatchParseError::FileRequired { position }),
    };
    Ok(Some(LinePos::new(file, number - 1)))
}

/// Renders `patch` in the text form accepted by [`parse_patch`].
pub fn format_patch(patch: &Patch, roster: &SourceRoster) -> String {
    PatchDisplay { patch, roster }.to_string()
}

struct PatchDisplay<'a> {
    patch: &'a Patch,
    roster: &'a SourceRoster,
}

impl fmt::Display for PatchDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let single = self.roster.files.len() == 1;
        let coord = |p: LinePos| {
            if single {
                format!("{}", p.line + 1)
            } else {
                let name = self.roster.files.get(p.file).map_or("?", |f| f.path.as_str());
                format!("{name}:{}", p.line + 1)
            }
        };
        for (i, edit) in self.patch.edits.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match *edit {
                Edit::Deletion { target } => write!(f, "Deletion {}", coord(target))?,
                Edit::Insertion { target, source } => {
                    write!(f, "Insertion before {} of {}", coord(target), coord(source))?
                }
                Edit::Replacement { target, source } => {
                    write!(f, "Replacement {} <- {}", coord(target), coord(source))?
                }
            }
        }
        Ok(())
    }
}
