//! Document loading and text normalization.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const EMAIL_TOKEN: &str = "[EMAIL]";
pub const PHONE_TOKEN: &str = "[PHONE]";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus path {0} is not a directory")]
    NotADirectory(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub source_path: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub doc_id: String,
    pub text: String,
    pub redaction_count: usize,
}

/// A file that was found but could not be ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub documents: Vec<RawDocument>,
    pub errors: Vec<FileError>,
}

pub fn default_extensions() -> Vec<String> {
    vec!["txt".to_string()]
}

/// Load every file under `dir` whose extension is in `extensions`.
///
/// Documents are returned in lexicographic order of their relative path, which
/// also serves as the `doc_id` (with `/` separators on every platform). Files
/// that are not valid UTF-8 are reported in [`LoadOutcome::errors`] and skipped.
pub fn load_documents(dir: &Path, extensions: &[String]) -> Result<LoadOutcome, CorpusError> {
    let meta = std::fs::metadata(dir)
        .map_err(|source| CorpusError::Unreadable { path: dir.to_path_buf(), source })?;
    if !meta.is_dir() {
        return Err(CorpusError::NotADirectory(dir.to_path_buf()));
    }

    let mut files: Vec<(String, PathBuf)> = Vec::new();
    for entry in walkdir::WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| CorpusError::Unreadable {
            path: e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf()),
            source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk error")),
        })?;
        if !entry.file_type().is_file() || !has_allowed_extension(entry.path(), extensions) {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).unwrap_or(entry.path());
        let doc_id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.push((doc_id, entry.path().to_path_buf()));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut outcome = LoadOutcome::default();
    for (doc_id, path) in files {
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) => {
                outcome.errors.push(FileError { path: path.display().to_string(), message: e.to_string() });
                continue;
            }
        };
        match String::from_utf8(bytes) {
            Ok(text) => {
                let mut metadata = BTreeMap::new();
                metadata.insert("bytes".to_string(), text.len().to_string());
                outcome.documents.push(RawDocument {
                    doc_id,
                    source_path: path.display().to_string(),
                    text,
                    metadata,
                });
            }
            Err(e) => outcome.errors.push(FileError {
                path: path.display().to_string(),
                message: format!("not valid UTF-8: {}", e.utf8_error()),
            }),
        }
    }
    Ok(outcome)
}

fn has_allowed_extension(path: &Path, extensions: &[String]) -> bool {
    let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
        return false;
    };
    extensions.iter().any(|allowed| allowed.trim_start_matches('.').eq_ignore_ascii_case(ext))
}

fn email_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}").unwrap()
    })
}

fn phone_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:\+?1[-. ]?)?(?:\(\d{3}\)|\b\d{3})[-. ]?\d{3}[-. ]\d{4}\b").unwrap()
    })
}

/// Clean a raw document: canonical composition, line-ending and whitespace
/// normalization, and optional redaction of emails and phone numbers.
pub fn normalize_text(doc: &RawDocument, redact: bool) -> CleanDocument {
    let (text, redaction_count) = normalize_str(&doc.text, redact);
    CleanDocument { doc_id: doc.doc_id.clone(), text, redaction_count }
}

pub fn normalize_str(input: &str, redact: bool) -> (String, usize) {
    // Control characters go before composition so that removing one can never
    // leave a newly composable pair behind.
    let mut mapped = String::with_capacity(input.len());
    let mut chars = input.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                mapped.push('\n');
            }
            '\n' => mapped.push('\n'),
            c if c.is_whitespace() => mapped.push(' '),
            c if c.is_control() => {}
            c => mapped.push(c),
        }
    }

    let composed: String = mapped.nfc().collect();
    let mut text = collapse_whitespace(&composed);

    let mut redactions = 0;
    if redact {
        loop {
            let before = redactions;
            for (re, token) in [(email_re(), EMAIL_TOKEN), (phone_re(), PHONE_TOKEN)] {
                let n = re.find_iter(&text).count();
                if n > 0 {
                    redactions += n;
                    text = re.replace_all(&text, token).into_owned();
                }
            }
            if redactions == before {
                break;
            }
        }
    }
    (text, redactions)
}

/// Each maximal run of spaces and newlines becomes one space if it has no
/// newline, otherwise one or two newlines with the spaces dropped.
fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run: Option<usize> = None;
    let flush = |out: &mut String, newlines: usize| match newlines {
        0 => out.push(' '),
        1 => out.push('\n'),
        _ => out.push_str("\n\n"),
    };
    for c in s.chars() {
        match c {
            ' ' => {
                run.get_or_insert(0);
            }
            '\n' => *run.get_or_insert(0) += 1,
            c => {
                if let Some(n) = run.take() {
                    flush(&mut out, n);
                }
                out.push(c);
            }
        }
    }
    if let Some(n) = run {
        flush(&mut out, n);
    }
    out.trim_matches(|c: char| c == ' ' || c == '\n').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(text: &str) -> RawDocument {
        RawDocument {
            doc_id: "d".into(),
            source_path: "d.txt".into(),
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn empty_input() {
        let clean = normalize_text(&raw(""), true);
        assert_eq!(clean.text, "");
        assert_eq!(clean.redaction_count, 0);
    }

    #[test]
    fn crlf_tabs_and_spaces() {
        assert_eq!(normalize_text(&raw("a\r\nb\t\tc  d"), false).text, "a\nb c d");
    }

    #[test]
    fn newline_runs_collapse_to_two() {
        assert_eq!(normalize_str("a\n\n\n\nb\n\nc\nd", false).0, "a\n\nb\n\nc\nd");
    }

    #[test]
    fn trims_and_strips_controls() {
        assert_eq!(normalize_str("  \n x\u{0007}y \u{00a0} z \n\n", false).0, "xy z");
    }

    #[test]
    fn composes_to_canonical_form() {
        assert_eq!(normalize_str("Cafe\u{0301}", false).0, "Caf\u{e9}");
    }

    #[test]
    fn phone_redaction() {
        let clean = normalize_text(&raw("call 555-123-4567"), true);
        assert_eq!(clean.text, "call [PHONE]");
        assert_eq!(clean.redaction_count, 1);
    }

    #[test]
    fn email_and_phone_variants() {
        let (text, n) = normalize_str(
            "Mail clerk@city.gov or (555) 123-4567, +1 555.123.4567 again",
            true,
        );
        assert_eq!(text, "Mail [EMAIL] or [PHONE], [PHONE] again");
        assert_eq!(n, 3);
    }

    #[test]
    fn no_redaction_when_disabled() {
        let (text, n) = normalize_str("clerk@city.gov", false);
        assert_eq!(text, "clerk@city.gov");
        assert_eq!(n, 0);
    }

    #[test]
    fn load_orders_lexicographically_and_skips_bad_utf8() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), "bee").unwrap();
        std::fs::write(dir.path().join("a.txt"), "ay").unwrap();
        std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        std::fs::write(dir.path().join("c.txt"), [0xff, 0xfe, 0x00]).unwrap();
        let out = load_documents(dir.path(), &default_extensions()).unwrap();
        let ids: Vec<_> = out.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a.txt", "b.txt"]);
        assert_eq!(out.errors.len(), 1);
        assert!(out.errors[0].path.ends_with("c.txt"));
    }

    #[test]
    fn load_empty_dir_and_missing_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_documents(dir.path(), &default_extensions()).unwrap().documents.is_empty());
        let missing = dir.path().join("nope");
        assert!(matches!(
            load_documents(&missing, &default_extensions()),
            Err(CorpusError::Unreadable { .. })
        ));
    }

    #[test]
    fn nested_files_use_relative_ids() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("2024")).unwrap();
        std::fs::write(dir.path().join("2024/jan.txt"), "x").unwrap();
        std::fs::write(dir.path().join("top.TXT"), "y").unwrap();
        let out = load_documents(dir.path(), &default_extensions()).unwrap();
        let ids: Vec<_> = out.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["2024/jan.txt", "top.TXT"]);
    }

    fn messy_text() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "a", "Z", "7", "e\u{301}", "\u{e9}", " ", "  ", "\t", "\r\n", "\n", "\n\n\n", "\r",
            "\u{0}", "\u{7f}", "\u{a0}", "x@y.com", "555-123-4567", "(212) 555 0100", ".", "?",
            "\u{2003}", "\u{301}",
        ]);
        prop::collection::vec(pieces, 0..40).prop_map(|v| v.concat())
    }

    proptest! {
        #[test]
        fn idempotent(s in messy_text(), redact in any::<bool>()) {
            let (once, _) = normalize_str(&s, redact);
            let (twice, n) = normalize_str(&once, redact);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(n, 0);
        }

        #[test]
        fn idempotent_on_arbitrary_strings(s in any::<String>()) {
            let (once, _) = normalize_str(&s, false);
            prop_assert_eq!(normalize_str(&once, false).0, once);
        }

        #[test]
        fn never_grows_without_redaction(s in messy_text()) {
            let (out, _) = normalize_str(&s, false);
            prop_assert!(out.chars().count() <= s.chars().count());
        }

        #[test]
        fn output_invariants(s in any::<String>()) {
            let (out, _) = normalize_str(&s, false);
            prop_assert!(!out.contains("  "));
            prop_assert!(!out.contains("\n\n\n"));
            prop_assert!(out.chars().all(|c| c == '\n' || !c.is_control()));
        }
    }
}
