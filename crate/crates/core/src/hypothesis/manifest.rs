//! Hypothesis manifest files: a TOML list of hypothesis specs.
//!
//! ```toml
//! [[hypothesis]]
//! id = "h_kw"
//! kind = "keyword"
//! keyword = "SELECT"
//!
//! [[hypothesis]]
//! id = "h_depth"
//! kind = "tree-depth"      # or tree-time / tree-signal
//! node_type = "R1"
//!
//! [[hypothesis]]
//! id = "h_paren"
//! kind = "fsm"
//! fsm = "paren.tsv"        # path relative to the manifest
//! # state = "hit"          # optional: indicator of one state
//!
//! [[hypothesis]]
//! id = "h_ext"
//! kind = "external-file"
//! path = "behaviors.dnib"
//! column = "h_ext"
//! # output = "binary"      # default "real"
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::{Fsm, HypothesisSpec, OutputKind, TreeMode};

#[derive(Debug, Deserialize)]
struct ManifestFile {
    #[serde(default)]
    hypothesis: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    id: String,
    kind: String,
    keyword: Option<String>,
    node_type: Option<String>,
    fsm: Option<String>,
    state: Option<String>,
    path: Option<String>,
    column: Option<String>,
    output: Option<String>,
}

/// Loads hypothesis specs from a manifest file. Relative `fsm` and `path`
/// entries are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<HypothesisSpec>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file: ManifestFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("manifest {}: {}", path.display(), e)))?;
    if file.hypothesis.is_empty() {
        return Err(Error::EmptyInput(format!("manifest {} declares no hypotheses", path.display())));
    }
    file.hypothesis.into_iter().map(|e| build(e, base)).collect()
}

fn build(e: Entry, base: &Path) -> Result<HypothesisSpec> {
    let need = |field: Option<String>, name: &str, kind: &str| {
        field.ok_or_else(|| Error::Config(format!("hypothesis {:?}: kind {} requires `{}`", e.id, kind, name)))
    };
    match e.kind.as_str() {
        "keyword" => Ok(HypothesisSpec::keyword(e.id.clone(), need(e.keyword, "keyword", "keyword")?)),
        "tree-time" | "tree-signal" | "tree-depth" => {
            let mode = match e.kind.as_str() {
                "tree-time" => TreeMode::Time,
                "tree-signal" => TreeMode::Signal,
                _ => TreeMode::Depth,
            };
            Ok(HypothesisSpec::tree(e.id.clone(), need(e.node_type, "node_type", &e.kind)?, mode))
        }
        "fsm" => {
            let rel = need(e.fsm, "fsm", "fsm")?;
            let fsm = Arc::new(Fsm::load(base.join(rel))?);
            if let Some(state) = &e.state {
                if fsm.state_index(state).is_none() {
                    return Err(Error::Config(format!("hypothesis {:?}: unknown fsm state {:?}", e.id, state)));
                }
            }
            Ok(HypothesisSpec::fsm(e.id.clone(), fsm, e.state))
        }
        "external-file" => {
            let rel = need(e.path, "path", "external-file")?;
            let column = e.column.clone().unwrap_or_else(|| e.id.clone());
            let output = match e.output.as_deref() {
                None | Some("real") => OutputKind::Real,
                Some("binary") => OutputKind::Binary,
                Some("integer") => OutputKind::Integer,
                Some(other) => {
                    return Err(Error::Config(format!("hypothesis {:?}: unknown output kind {:?}", e.id, other)))
                }
            };
            Ok(HypothesisSpec::external(e.id.clone(), base.join(rel), column, output))
        }
        other => Err(Error::Config(format!("hypothesis {:?}: unknown kind {:?}", e.id, other))),
    }
}
