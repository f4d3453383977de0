use super::{check_invariants, Description, EdgeDescription, GdlError, Interval, IntervalVec, NodeDescription, Program};

/// Parses GDL text: one description per line, `//` starts a comment, blank
/// lines are ignored.
pub fn parse_program(text: &str) -> Result<Program, GdlError> {
    let mut descriptions = Vec::new();
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find("//") {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        if content.trim().is_empty() {
            continue;
        }
        let mut cursor = Cursor::new(content, line_no);
        descriptions.push(cursor.description()?);
        lines.push(line_no);
    }
    check_invariants(&descriptions, |i| lines[i])?;
    Ok(Program { descriptions })
}

struct Cursor<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    line: usize,
    src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str, line: usize) -> Self {
        Cursor {
            chars: src.char_indices().collect(),
            pos: 0,
            line,
            src,
        }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn error(&self, message: impl Into<String>) -> GdlError {
        GdlError::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, ch: char) -> Result<(), GdlError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected `{ch}`, found `{c}`"))),
            None => Err(self.error(format!("expected `{ch}`, found end of line"))),
        }
    }

    fn ident(&mut self) -> Result<String, GdlError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() => self.pos += 1,
            Some(c) => return Err(self.error(format!("expected identifier, found `{c}`"))),
            None => return Err(self.error("expected identifier, found end of line")),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        Ok(self.slice(start, self.pos).to_string())
    }

    fn slice(&self, start: usize, end: usize) -> &'a str {
        let from = self.chars.get(start).map_or(self.src.len(), |&(b, _)| b);
        let to = self.chars.get(end).map_or(self.src.len(), |&(b, _)| b);
        &self.src[from..to]
    }

    fn description(&mut self) -> Result<Description, GdlError> {
        let keyword_col = {
            self.skip_ws();
            self.pos
        };
        let keyword = self.ident()?;
        let desc = match keyword.as_str() {
            "node" => {
                let var = self.ident()?;
                let constraints = self.constraints()?;
                Description::Node(NodeDescription { var, constraints })
            }
            "edge" => {
                self.expect('(')?;
                let src = self.ident()?;
                self.expect(',')?;
                let dst = self.ident()?;
                self.expect(')')?;
                let constraints = self.constraints()?;
                Description::Edge(EdgeDescription { src, dst, constraints })
            }
            other => {
                self.pos = keyword_col;
                return Err(self.error(format!("expected `node` or `edge`, found `{other}`")));
            }
        };
        self.skip_ws();
        if let Some(c) = self.peek() {
            return Err(self.error(format!("unexpected `{c}` after description")));
        }
        Ok(desc)
    }

    fn constraints(&mut self) -> Result<Option<IntervalVec>, GdlError> {
        self.skip_ws();
        if self.peek() != Some('<') {
            return Ok(None);
        }
        self.pos += 1;
        let mut intervals = vec![self.interval()?];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.pos += 1;
                    intervals.push(self.interval()?);
                }
                Some('>') => {
                    self.pos += 1;
                    return Ok(Some(IntervalVec::new(intervals)));
                }
                Some(c) => return Err(self.error(format!("expected `,` or `>`, found `{c}`"))),
                None => return Err(self.error("unterminated interval vector")),
            }
        }
    }

    fn interval(&mut self) -> Result<Interval, GdlError> {
        self.expect('[')?;
        self.skip_ws();
        let lo_col = self.pos;
        let lo = self.number()?;
        if lo == f64::INFINITY {
            self.pos = lo_col;
            return Err(self.error("lower bound cannot be `inf`"));
        }
        self.expect(',')?;
        self.skip_ws();
        let hi_col = self.pos;
        let hi = self.number()?;
        if hi == f64::NEG_INFINITY {
            self.pos = hi_col;
            return Err(self.error("upper bound cannot be `-inf`"));
        }
        self.expect(']')?;
        Interval::new(lo, hi).map_err(|_| {
            self.pos = lo_col;
            self.error(format!("empty interval [{lo}, {hi}]"))
        })
    }

    fn number(&mut self) -> Result<f64, GdlError> {
        self.skip_ws();
        let start = self.pos;
        if matches!(self.peek(), Some('+' | '-')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '.' || c == '_')
            || (matches!(self.peek(), Some('+' | '-'))
                && matches!(self.chars.get(self.pos.wrapping_sub(1)), Some((_, 'e' | 'E'))))
        {
            self.pos += 1;
        }
        let token = self.slice(start, self.pos);
        let unsigned = token.trim_start_matches(['+', '-']);
        let negative = token.starts_with('-');
        let value = match unsigned {
            "inf" => Some(if negative { f64::NEG_INFINITY } else { f64::INFINITY }),
            _ if is_decimal(unsigned) => token.parse::<f64>().ok().filter(|v| v.is_finite()),
            _ => None,
        };
        match value {
            Some(v) => Ok(v),
            None => {
                self.pos = start;
                Err(self.error(format!("invalid number `{token}`")))
            }
        }
    }
}

// digits [ "." digits ] [ ("e"|"E") [sign] digits ]
fn is_decimal(s: &str) -> bool {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = match mantissa.split_once('.') {
        Some((int, frac)) => digits(int) && digits(frac),
        None => digits(mantissa),
    };
    let exponent_ok = exponent.is_none_or(|e| digits(e.strip_prefix(['+', '-']).unwrap_or(e)));
    mantissa_ok && exponent_ok
}
