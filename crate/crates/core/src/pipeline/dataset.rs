//! JSONL dataset ingestion and the label-leakage filter.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::encoder::{mbti_codes, Labels, UserDocument};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct RawDoc {
    user_id: String,
    posts: Vec<String>,
    #[serde(default)]
    labels: Option<RawLabels>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLabels {
    Bits {
        #[serde(rename = "IE")]
        ie: u8,
        #[serde(rename = "SN")]
        sn: u8,
        #[serde(rename = "TF")]
        tf: u8,
        #[serde(rename = "PJ")]
        pj: u8,
    },
    Code(String),
}

/// Load a dataset with one JSON record per line. Labels may be either the
/// four-bit object or a four-letter MBTI code; both are validated.
pub fn load_jsonl_dataset(path: &Path) -> Result<Vec<UserDocument>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut docs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: display.clone(),
            line: lineno + 1,
            msg,
        };
        let raw: RawDoc =
            serde_json::from_str(line).map_err(|e| err(format!("malformed record: {e}")))?;
        let labels = match raw.labels {
            None => None,
            Some(RawLabels::Bits { ie, sn, tf, pj }) => {
                Some(Labels::new(ie, sn, tf, pj).map_err(|e| err(e.to_string()))?)
            }
            Some(RawLabels::Code(code)) => {
                Some(Labels::from_code(&code).map_err(|_| err(format!("unknown label `{code}`")))?)
            }
        };
        if !seen.insert(raw.user_id.clone()) {
            return Err(err(format!("duplicate user_id `{}`", raw.user_id)));
        }
        let doc =
            UserDocument::new(raw.user_id, raw.posts, labels).map_err(|e| err(e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Write documents in the same JSONL schema (bit-form labels).
pub fn save_jsonl_dataset(path: &Path, docs: &[UserDocument]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for doc in docs {
        let labels = doc.labels.map(|l| {
            serde_json::json!({
                "IE": l.ie, "SN": l.sn, "TF": l.tf, "PJ": l.pj,
            })
        });
        let mut record = serde_json::json!({
            "user_id": doc.user_id,
            "posts": doc.posts,
        });
        if let Some(l) = labels {
            record["labels"] = l;
        }
        writeln!(file, "{record}")?;
    }
    Ok(())
}

/// Delete tokens that case-insensitively equal one of the sixteen MBTI type
/// codes; all other tokens keep their order. Substrings survive, so a word
/// like "information" is untouched.
pub fn leakage_filter(posts: &[String]) -> Vec<String> {
    let codes = mbti_codes();
    posts
        .iter()
        .map(|post| {
            post.split_whitespace()
                .filter(|tok| !codes.iter().any(|c| tok.eq_ignore_ascii_case(c)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// Apply the leakage filter to every document.
pub fn preprocess(docs: &[UserDocument]) -> Vec<UserDocument> {
    docs.iter()
        .map(|d| UserDocument {
            user_id: d.user_id.clone(),
            posts: leakage_filter(&d.posts),
            labels: d.labels,
        })
        .collect()
}
