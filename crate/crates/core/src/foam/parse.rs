use super::node::{DimensionSet, Dimensioned, Entry, FoamDict, FoamFile, FoamNode, Scalar};
use super::FoamError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Word(String),
    Str(String),
    /// `#{ ... #}` verbatim code block.
    Code(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::LBracket => "[".into(),
            Tok::RBracket => "]".into(),
            Tok::Semi => ";".into(),
            Tok::Word(w) | Tok::Str(w) => w.clone(),
            Tok::Code(_) => "#{".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cursor {
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    start: usize,
    line: usize,
    col: usize,
}

struct Parser<'a> {
    src: &'a str,
    cur: Cursor,
}

/// Parses OpenFOAM dictionary text.
///
/// Comments are dropped. Directives (`#include`, `#inputMode`, ...) are kept
/// verbatim as [`Entry::Directive`] and never evaluated. A leading `FoamFile`
/// sub-dictionary becomes the header.
pub fn parse_dict(text: &str) -> Result<FoamFile, FoamError> {
    let mut p = Parser {
        src: text,
        cur: Cursor {
            pos: 0,
            line: 1,
            col: 1,
        },
    };
    let mut root = p.parse_entries(false)?;
    let header = match root.entries().first() {
        Some(Entry::Keyed {
            key,
            value: FoamNode::Dict(_),
        }) if key == "FoamFile" => match root.remove_entry(0) {
            Entry::Keyed {
                value: FoamNode::Dict(d),
                ..
            } => Some(d),
            _ => unreachable!(),
        },
        _ => None,
    };
    Ok(FoamFile {
        header,
        root,
        source_path: None,
    })
}

fn is_numeric(word: &str) -> bool {
    Scalar::from_token(word).is_number()
}

fn is_delim(c: char) -> bool {
    c.is_whitespace() || matches!(c, '{' | '}' | '(' | ')' | '[' | ']' | ';' | '"')
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.cur.pos..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.rest().chars().next()?;
        self.cur.pos += c.len_utf8();
        if c == '\n' {
            self.cur.line += 1;
            self.cur.col = 1;
        } else {
            self.cur.col += 1;
        }
        Some(c)
    }

    fn peek_char(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_trivia(&mut self) -> Result<(), FoamError> {
        loop {
            let rest = self.rest();
            if rest.starts_with("//") {
                while let Some(c) = self.peek_char() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else if rest.starts_with("/*") {
                let (line, col) = (self.cur.line, self.cur.col);
                self.bump();
                self.bump();
                loop {
                    if self.rest().starts_with("*/") {
                        self.bump();
                        self.bump();
                        break;
                    }
                    if self.bump().is_none() {
                        return Err(FoamError::Syntax {
                            line,
                            col,
                            token: "/*".into(),
                            message: "unterminated block comment".into(),
                        });
                    }
                }
            } else if self.peek_char().is_some_and(char::is_whitespace) {
                self.bump();
            } else {
                return Ok(());
            }
        }
    }

    fn next(&mut self) -> Result<Spanned, FoamError> {
        self.skip_trivia()?;
        let (start, line, col) = (self.cur.pos, self.cur.line, self.cur.col);
        let spanned = |tok| Spanned {
            tok,
            start,
            line,
            col,
        };
        let Some(c) = self.peek_char() else {
            return Ok(spanned(Tok::Eof));
        };
        let simple = match c {
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ';' => Some(Tok::Semi),
            _ => None,
        };
        if let Some(tok) = simple {
            self.bump();
            return Ok(spanned(tok));
        }
        if c == '"' {
            self.bump();
            let mut escaped = false;
            loop {
                match self.bump() {
                    None => {
                        return Err(FoamError::Syntax {
                            line,
                            col,
                            token: "\"".into(),
                            message: "unterminated string".into(),
                        })
                    }
                    Some('\\') if !escaped => escaped = true,
                    Some('"') if !escaped => break,
                    Some(_) => escaped = false,
                }
            }
            return Ok(spanned(Tok::Str(self.src[start..self.cur.pos].to_string())));
        }
        if self.rest().starts_with("#{") {
            loop {
                if self.rest().starts_with("#}") {
                    self.bump();
                    self.bump();
                    break;
                }
                if self.bump().is_none() {
                    return Err(FoamError::Syntax {
                        line,
                        col,
                        token: "#{".into(),
                        message: "unterminated code block".into(),
                    });
                }
            }
            return Ok(spanned(Tok::Code(self.src[start..self.cur.pos].to_string())));
        }
        // Word. Parentheses directly attached to a non-numeric word belong to
        // it, as in `div(phi,U)` or `laplacian((1|A(U)),p)`.
        if self.rest().starts_with("${") {
            while let Some(c) = self.bump() {
                if c == '}' {
                    break;
                }
            }
        }
        loop {
            match self.peek_char() {
                Some('(') if self.cur.pos > start && !is_numeric(&self.src[start..self.cur.pos]) => {
                    let mut depth = 0usize;
                    while let Some(c) = self.peek_char() {
                        if c == '\n' || c == ';' || c == '{' || c == '}' {
                            break;
                        }
                        self.bump();
                        if c == '(' {
                            depth += 1;
                        } else if c == ')' {
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                    }
                    if depth != 0 {
                        return Err(FoamError::Syntax {
                            line,
                            col,
                            token: self.src[start..self.cur.pos].to_string(),
                            message: "unbalanced parentheses in word".into(),
                        });
                    }
                }
                Some(c) if !is_delim(c) => {
                    if self.rest().starts_with("//") || self.rest().starts_with("/*") {
                        break;
                    }
                    self.bump();
                }
                _ => break,
            }
        }
        Ok(spanned(Tok::Word(self.src[start..self.cur.pos].to_string())))
    }

    fn peek(&mut self) -> Result<Spanned, FoamError> {
        let saved = self.cur;
        let t = self.next();
        self.cur = saved;
        t
    }

    fn syntax(t: &Spanned, message: &str) -> FoamError {
        FoamError::Syntax {
            line: t.line,
            col: t.col,
            token: t.tok.describe(),
            message: message.into(),
        }
    }

    fn parse_entries(&mut self, nested: bool) -> Result<FoamDict, FoamError> {
        let mut dict = FoamDict::new();
        loop {
            let t = self.next()?;
            match &t.tok {
                Tok::Eof => {
                    if nested {
                        return Err(FoamError::UnbalancedBraces {
                            line: t.line,
                            col: t.col,
                            message: "missing '}' before end of input".into(),
                        });
                    }
                    return Ok(dict);
                }
                Tok::RBrace => {
                    if nested {
                        return Ok(dict);
                    }
                    return Err(FoamError::UnbalancedBraces {
                        line: t.line,
                        col: t.col,
                        message: "unexpected '}'".into(),
                    });
                }
                Tok::Semi => continue,
                Tok::Word(w) if w.starts_with('#') => {
                    let eol = self.src[t.start..]
                        .find('\n')
                        .map_or(self.src.len(), |i| t.start + i);
                    let line = self.src[t.start..eol].trim_end().to_string();
                    while self.cur.pos < eol {
                        self.bump();
                    }
                    dict.push_entry(Entry::Directive(line));
                }
                Tok::Word(w) if is_numeric(w) => {
                    self.cur = Cursor {
                        pos: t.start,
                        line: t.line,
                        col: t.col,
                    };
                    let value = self.parse_bare(nested)?;
                    dict.push_entry(Entry::Bare(value));
                }
                Tok::LParen => {
                    self.cur = Cursor {
                        pos: t.start,
                        line: t.line,
                        col: t.col,
                    };
                    let value = self.parse_bare(nested)?;
                    dict.push_entry(Entry::Bare(value));
                }
                Tok::Word(key) | Tok::Str(key) => {
                    let key = key.clone();
                    if dict.contains_key(&key) {
                        return Err(FoamError::DuplicateKeyword {
                            key,
                            line: t.line,
                            col: t.col,
                        });
                    }
                    let value = self.parse_entry_value()?;
                    dict.push_entry(Entry::Keyed { key, value });
                }
                _ => return Err(Self::syntax(&t, "expected a keyword")),
            }
        }
    }

    fn parse_entry_value(&mut self) -> Result<FoamNode, FoamError> {
        let t = self.peek()?;
        match t.tok {
            Tok::LBrace => {
                self.next()?;
                return Ok(FoamNode::Dict(self.parse_entries(true)?));
            }
            Tok::Semi => {
                self.next()?;
                return Ok(FoamNode::Seq(Vec::new()));
            }
            _ => {}
        }
        let mut items = Vec::new();
        loop {
            let t = self.peek()?;
            match t.tok {
                Tok::Semi => {
                    self.next()?;
                    break;
                }
                Tok::Eof => return Err(Self::syntax(&t, "expected ';'")),
                Tok::RBrace | Tok::RParen | Tok::RBracket => {
                    return Err(Self::syntax(&t, "expected ';'"))
                }
                _ => items.push(self.parse_item()?),
            }
        }
        Ok(fold_items(items))
    }

    /// Unkeyed content: items up to `;` or, at the top level, end of input.
    fn parse_bare(&mut self, nested: bool) -> Result<FoamNode, FoamError> {
        let mut items = Vec::new();
        loop {
            let t = self.peek()?;
            match t.tok {
                Tok::Semi => {
                    self.next()?;
                    break;
                }
                Tok::Eof if !nested => break,
                Tok::Eof | Tok::RBrace | Tok::RParen | Tok::RBracket => {
                    return Err(Self::syntax(&t, "expected ';'"))
                }
                _ => items.push(self.parse_item()?),
            }
        }
        Ok(fold_items(items))
    }

    fn parse_item(&mut self) -> Result<FoamNode, FoamError> {
        let t = self.next()?;
        match t.tok {
            Tok::Word(w) | Tok::Str(w) => Ok(FoamNode::Scalar(Scalar::from_token(w))),
            Tok::Code(c) => Ok(FoamNode::Raw(c)),
            Tok::LBrace => Ok(FoamNode::Dict(self.parse_entries(true)?)),
            Tok::LParen => self.parse_list(&t),
            Tok::LBracket => self.parse_dimensions(&t),
            Tok::RBrace => Err(FoamError::UnbalancedBraces {
                line: t.line,
                col: t.col,
                message: "unexpected '}'".into(),
            }),
            _ => Err(Self::syntax(&t, "unexpected token")),
        }
    }

    fn parse_list(&mut self, open: &Spanned) -> Result<FoamNode, FoamError> {
        let mut items = Vec::new();
        loop {
            let t = self.peek()?;
            match t.tok {
                Tok::RParen => {
                    self.next()?;
                    return Ok(FoamNode::List(items));
                }
                Tok::Eof => return Err(Self::syntax(open, "unterminated list")),
                Tok::Semi => return Err(Self::syntax(&t, "unexpected ';' inside list")),
                _ => {
                    let item = self.parse_item()?;
                    // `name { ... }` pairs, as in polyMesh/boundary.
                    if let FoamNode::Scalar(s) = &item {
                        if !s.is_number() && self.peek()?.tok == Tok::LBrace {
                            self.next()?;
                            let body = self.parse_entries(true)?;
                            items.push(FoamNode::Seq(vec![item, FoamNode::Dict(body)]));
                            continue;
                        }
                    }
                    items.push(item);
                }
            }
        }
    }

    fn parse_dimensions(&mut self, open: &Spanned) -> Result<FoamNode, FoamError> {
        let mut words = Vec::new();
        let mut modelled = true;
        loop {
            let t = self.next()?;
            match t.tok {
                Tok::RBracket => break,
                Tok::Word(w) => words.push(w),
                Tok::Eof => return Err(Self::syntax(open, "unterminated dimension set")),
                _ => modelled = false,
            }
        }
        let exps: Vec<i32> = words.iter().filter_map(|w| w.parse().ok()).collect();
        if modelled && exps.len() == 7 && words.len() == 7 {
            let mut arr = [0i32; 7];
            arr.copy_from_slice(&exps);
            Ok(FoamNode::Dimensions(DimensionSet(arr)))
        } else {
            Ok(FoamNode::Raw(self.src[open.start..self.cur.pos].to_string()))
        }
    }
}

/// Collapses an item sequence into its canonical node.
fn fold_items(mut items: Vec<FoamNode>) -> FoamNode {
    match items.as_slice() {
        [FoamNode::Dimensions(d), FoamNode::Scalar(v)] if v.is_number() => {
            return FoamNode::Dimensioned(Dimensioned {
                name: None,
                dimensions: *d,
                value: v.clone(),
            })
        }
        [FoamNode::Scalar(n), FoamNode::Dimensions(d), FoamNode::Scalar(v)]
            if v.is_number() && !n.is_number() =>
        {
            return FoamNode::Dimensioned(Dimensioned {
                name: Some(n.text().to_string()),
                dimensions: *d,
                value: v.clone(),
            })
        }
        _ => {}
    }
    if items.len() == 1 {
        items.pop().unwrap()
    } else {
        FoamNode::Seq(items)
    }
}
