//! Strict RFC 4180-style CSV reading and writing.
//!
//! The writer is canonical: fields are quoted only when they contain a
//! comma, quote, or line break, embedded quotes are doubled, records are
//! joined with `\n` and the output ends with a newline. Parsing a
//! canonically written file and re-serializing it is byte-identical,
//! which the archive formats rely on.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("line {line}: unclosed quoted field")]
    UnclosedQuote { line: usize },
    #[error("line {line}: bare quote inside unquoted field")]
    BareQuote { line: usize },
    #[error("line {line}: unexpected character after closing quote")]
    TrailingGarbage { line: usize },
    #[error("line {line}: bare carriage return inside unquoted field")]
    BareCarriageReturn { line: usize },
}

/// One parsed record with the 1-based line number it started on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Parses CSV text into records. Blank lines come back as a single empty
/// field so callers can decide whether they are noise.
pub fn parse(text: &str) -> Result<Vec<Record>, CsvError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut records = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut line = 1usize;
    let mut record_line = 1usize;
    let mut chars = text.chars().peekable();
    // Parser states: at the start of a field, inside an unquoted field,
    // inside a quoted field, or just past a closing quote.
    enum State {
        FieldStart,
        Unquoted,
        Quoted,
        QuoteClosed,
    }
    let mut state = State::FieldStart;
    let mut saw_any = false;

    macro_rules! end_record {
        () => {{
            fields.push(std::mem::take(&mut field));
            records.push(Record { line: record_line, fields: std::mem::take(&mut fields) });
            state = State::FieldStart;
        }};
    }

    while let Some(c) = chars.next() {
        saw_any = true;
        match state {
            State::FieldStart => match c {
                '"' => state = State::Quoted,
                ',' => fields.push(String::new()),
                '\n' => {
                    end_record!();
                    line += 1;
                    record_line = line;
                }
                '\r' => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                        end_record!();
                        line += 1;
                        record_line = line;
                    } else {
                        return Err(CsvError::BareCarriageReturn { line });
                    }
                }
                _ => {
                    field.push(c);
                    state = State::Unquoted;
                }
            },
            State::Unquoted => match c {
                '"' => return Err(CsvError::BareQuote { line }),
                ',' => {
                    fields.push(std::mem::take(&mut field));
                    state = State::FieldStart;
                }
                '\n' => {
                    end_record!();
                    line += 1;
                    record_line = line;
                }
                '\r' => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                        end_record!();
                        line += 1;
                        record_line = line;
                    } else {
                        return Err(CsvError::BareCarriageReturn { line });
                    }
                }
                _ => field.push(c),
            },
            State::Quoted => match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        state = State::QuoteClosed;
                    }
                }
                '\n' => {
                    field.push('\n');
                    line += 1;
                }
                _ => field.push(c),
            },
            State::QuoteClosed => match c {
                ',' => {
                    fields.push(std::mem::take(&mut field));
                    state = State::FieldStart;
                }
                '\n' => {
                    end_record!();
                    line += 1;
                    record_line = line;
                }
                '\r' => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                        end_record!();
                        line += 1;
                        record_line = line;
                    } else {
                        return Err(CsvError::TrailingGarbage { line });
                    }
                }
                _ => return Err(CsvError::TrailingGarbage { line }),
            },
        }
    }

    match state {
        State::Quoted => return Err(CsvError::UnclosedQuote { line: record_line }),
        State::FieldStart => {
            // Text ending mid-record (no trailing newline) still yields the
            // final record; a trailing newline yields nothing extra.
            if !fields.is_empty() || (saw_any && !text.ends_with('\n')) {
                end_record!();
            }
        }
        State::Unquoted | State::QuoteClosed => end_record!(),
    }
    let _ = state;
    Ok(records)
}

/// Quotes a single field canonically.
pub fn escape_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        let mut out = String::with_capacity(s.len() + 2);
        out.push('"');
        for c in s.chars() {
            if c == '"' {
                out.push('"');
            }
            out.push(c);
        }
        out.push('"');
        out
    } else {
        s.to_string()
    }
}

/// Serializes records canonically: minimal quoting, `\n` separators,
/// trailing newline.
pub fn write(rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for row in rows {
        let mut first = true;
        for f in row {
            if !first {
                out.push(',');
            }
            out.push_str(&escape_field(f));
            first = false;
        }
        out.push('\n');
    }
    out
}
