//! Line-oriented text container shared by the model file formats.
//!
//! A file starts with a header line (`RELPROP-MODEL v1`, ...) followed by
//! keyword lines and tensor blocks:
//!
//! ```text
//! tensor <name> <dim> <dim> ...
//! data <v> <v> <v> ...
//! data <v> ...
//! ```
//!
//! Values are written with the shortest representation that parses back to
//! the identical `f64`, so a save/load cycle is bit-exact. Blank lines and
//! lines starting with `#` are ignored. Every file ends with an `end` line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const VALUES_PER_LINE: usize = 8;

pub struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new(header: &str) -> Self {
        let mut buf = String::new();
        buf.push_str(header);
        buf.push('\n');
        TextWriter { buf }
    }

    pub fn line(&mut self, tokens: &[&dyn std::fmt::Display]) {
        let mut first = true;
        for t in tokens {
            if !first {
                self.buf.push(' ');
            }
            first = false;
            write!(self.buf, "{t}").unwrap();
        }
        self.buf.push('\n');
    }

    pub fn tensor(&mut self, name: &str, tensor: &Tensor) {
        write!(self.buf, "tensor {name}").unwrap();
        for d in tensor.shape() {
            write!(self.buf, " {d}").unwrap();
        }
        self.buf.push('\n');
        for chunk in tensor.data().chunks(VALUES_PER_LINE) {
            self.buf.push_str("data");
            for v in chunk {
                write!(self.buf, " {v:e}").unwrap();
            }
            self.buf.push('\n');
        }
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("end\n");
        self.buf
    }
}

/// A significant line: byte offset of its first character plus its tokens.
#[derive(Debug, Clone)]
pub struct Line<'a> {
    pub offset: usize,
    pub tokens: Vec<&'a str>,
}

impl<'a> Line<'a> {
    pub fn keyword(&self) -> &'a str {
        self.tokens[0]
    }

    pub fn arg(&self, i: usize) -> Result<&'a str> {
        self.tokens.get(i + 1).copied().ok_or_else(|| {
            Error::parse(self.offset, format!("'{}' line is missing argument {}", self.keyword(), i + 1))
        })
    }

    pub fn parse_arg<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        let raw = self.arg(i)?;
        raw.parse()
            .map_err(|_| Error::parse(self.offset, format!("invalid value '{raw}' in '{}' line", self.keyword())))
    }

    pub fn parse_args_from<T: std::str::FromStr>(&self, i: usize) -> Result<Vec<T>> {
        (i..self.tokens.len() - 1).map(|k| self.parse_arg(k)).collect()
    }
}

pub struct TextReader<'a> {
    src: &'a str,
    pos: usize,
    peeked: Option<Line<'a>>,
}

impl<'a> TextReader<'a> {
    /// Checks the header line and positions the reader after it.
    pub fn new(src: &'a str, header: &str) -> Result<Self> {
        let mut r = TextReader { src, pos: 0, peeked: None };
        match r.raw_line() {
            Some((_, text)) if text.trim_end() == header => Ok(r),
            Some((off, text)) => {
                Err(Error::parse(off, format!("expected header '{header}', found '{}'", text.trim_end())))
            }
            None => Err(Error::parse(0, "empty file")),
        }
    }

    pub fn eof_offset(&self) -> usize {
        self.src.len()
    }

    fn raw_line(&mut self) -> Option<(usize, &'a str)> {
        if self.pos >= self.src.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.src[start..];
        let (text, advance) = match rest.find('\n') {
            Some(n) => (&rest[..n], n + 1),
            None => (rest, rest.len()),
        };
        self.pos += advance;
        Some((start, text))
    }

    pub fn peek(&mut self) -> Option<&Line<'a>> {
        if self.peeked.is_none() {
            self.peeked = self.read_significant();
        }
        self.peeked.as_ref()
    }

    fn read_significant(&mut self) -> Option<Line<'a>> {
        loop {
            let (offset, text) = self.raw_line()?;
            let lead = text.len() - text.trim_start().len();
            let trimmed = text.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Some(Line { offset: offset + lead, tokens: trimmed.split_whitespace().collect() });
        }
    }

    pub fn next_line(&mut self) -> Result<Line<'a>> {
        let eof = self.eof_offset();
        self.peeked
            .take()
            .or_else(|| self.read_significant())
            .ok_or_else(|| Error::parse(eof, "unexpected end of file"))
    }

    pub fn expect(&mut self, keyword: &str) -> Result<Line<'a>> {
        let line = self.next_line()?;
        if line.keyword() != keyword {
            return Err(Error::parse(
                line.offset,
                format!("expected '{keyword}', found '{}'", line.keyword()),
            ));
        }
        Ok(line)
    }

    /// Reads a `tensor <name> dims...` block and its `data` lines.
    pub fn tensor(&mut self, name: &str) -> Result<Tensor> {
        let head = self.expect("tensor")?;
        if head.arg(0)? != name {
            return Err(Error::parse(
                head.offset,
                format!("expected tensor '{name}', found '{}'", head.arg(0)?),
            ));
        }
        let shape: Vec<usize> = head.parse_args_from(1)?;
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Validation(format!(
                "tensor '{name}' at byte {} has invalid shape {shape:?}",
                head.offset
            )));
        }
        let expected: usize = shape.iter().product();
        let mut data = Vec::with_capacity(expected);
        loop {
            let is_data = match self.peek() {
                Some(line) => line.keyword() == "data",
                None => return Err(Error::parse(self.eof_offset(), format!("unexpected end of file in tensor '{name}'"))),
            };
            if !is_data {
                break;
            }
            let line = self.next_line()?;
            for k in 0..line.tokens.len() - 1 {
                data.push(line.parse_arg::<f64>(k)?);
            }
        }
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "tensor '{name}' at byte {} declares shape {shape:?} ({expected} values) but payload has {}",
                head.offset,
                data.len()
            )));
        }
        Tensor::new(shape, data)
    }

    pub fn finish(mut self) -> Result<()> {
        self.expect("end")?;
        if let Some(line) = self.peek() {
            return Err(Error::parse(line.offset, "trailing content after 'end'"));
        }
        Ok(())
    }
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, contents)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
