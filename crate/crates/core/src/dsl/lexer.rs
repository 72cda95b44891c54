use super::{ParseError, ParseErrorKind, Span, Token, TokenKind};

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn span_from(&self, start: (usize, u32, u32)) -> Span {
        Span {
            line: start.1,
            col: start.2,
            offset: start.0,
            len: self.pos - start.0,
        }
    }
}

/// Splits source text into tokens, ending with [`TokenKind::Eof`].
pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut c = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut tokens = Vec::new();
    loop {
        while let Some(ch) = c.peek() {
            if ch.is_whitespace() {
                c.bump();
            } else if ch == '#' {
                while c.peek().is_some_and(|ch| ch != '\n') {
                    c.bump();
                }
            } else {
                break;
            }
        }
        let start = (c.pos, c.line, c.col);
        let Some(ch) = c.peek() else {
            tokens.push(Token {
                kind: TokenKind::Eof,
                span: c.span_from(start),
            });
            return Ok(tokens);
        };
        let kind = if ch.is_ascii_alphabetic() || ch == '_' {
            while c.peek().is_some_and(|ch| ch.is_ascii_alphanumeric() || ch == '_') {
                c.bump();
            }
            match &src[start.0..c.pos] {
                "model" => TokenKind::Model,
                "if" => TokenKind::If,
                "reject" => TokenKind::Reject,
                "missing" => TokenKind::Missing,
                word => TokenKind::Ident(word.to_string()),
            }
        } else if ch.is_ascii_digit() {
            lex_number(&mut c, start)?
        } else {
            c.bump();
            let two = |c: &mut Cursor, next: char, yes: TokenKind, no: TokenKind| {
                if c.peek() == Some(next) {
                    c.bump();
                    yes
                } else {
                    no
                }
            };
            match ch {
                '~' => TokenKind::Tilde,
                '.' => two(&mut c, '~', TokenKind::DotTilde, TokenKind::Dot),
                '=' => two(&mut c, '=', TokenKind::EqEq, TokenKind::Assign),
                '<' => two(&mut c, '=', TokenKind::Le, TokenKind::Lt),
                '>' => two(&mut c, '=', TokenKind::Ge, TokenKind::Gt),
                '+' => TokenKind::Plus,
                '-' => TokenKind::Minus,
                '*' => TokenKind::Star,
                '/' => TokenKind::Slash,
                '^' => TokenKind::Caret,
                '\'' => TokenKind::Quote,
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                '[' => TokenKind::LBracket,
                ']' => TokenKind::RBracket,
                '{' => TokenKind::LBrace,
                '}' => TokenKind::RBrace,
                ',' => TokenKind::Comma,
                other => {
                    return Err(ParseError::new(
                        ParseErrorKind::Lex,
                        format!("illegal character {other:?}"),
                        c.span_from(start),
                    ))
                }
            }
        };
        tokens.push(Token {
            kind,
            span: c.span_from(start),
        });
    }
}

fn lex_number(c: &mut Cursor, start: (usize, u32, u32)) -> Result<TokenKind, ParseError> {
    let digits = |c: &mut Cursor| {
        while c.peek().is_some_and(|ch| ch.is_ascii_digit()) {
            c.bump();
        }
    };
    digits(c);
    let mut real = false;
    if c.peek() == Some('.') && c.peek2().is_some_and(|ch| ch.is_ascii_digit()) {
        real = true;
        c.bump();
        digits(c);
    }
    if matches!(c.peek(), Some('e' | 'E')) {
        let save = (c.pos, c.line, c.col);
        c.bump();
        if matches!(c.peek(), Some('+' | '-')) {
            c.bump();
        }
        if c.peek().is_some_and(|ch| ch.is_ascii_digit()) {
            real = true;
            digits(c);
        } else {
            (c.pos, c.line, c.col) = save;
        }
    }
    let text = &c.src[start.0..c.pos];
    let span = c.span_from(start);
    if real {
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(TokenKind::Real(x)),
            _ => Err(ParseError::new(ParseErrorKind::Lex, format!("number {text} out of range"), span)),
        }
    } else {
        text.parse::<i64>()
            .map(TokenKind::Int)
            .map_err(|_| ParseError::new(ParseErrorKind::Lex, format!("integer {text} out of range"), span))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        lex(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    fn ident(s: &str) -> TokenKind {
        TokenKind::Ident(s.into())
    }

    #[test]
    fn simple_tilde() {
        use TokenKind::*;
        assert_eq!(
            kinds("w ~ Normal(0, 1)"),
            vec![ident("w"), Tilde, ident("Normal"), LParen, Int(0), Comma, Int(1), RParen, Eof]
        );
    }

    #[test]
    fn broadcast_forms() {
        use TokenKind::*;
        assert_eq!(
            kinds("y .~ Bernoulli.(v)"),
            vec![ident("y"), DotTilde, ident("Bernoulli"), Dot, LParen, ident("v"), RParen, Eof]
        );
    }

    #[test]
    fn illegal_character() {
        let err = lex("w @ 3").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Lex);
        assert_eq!((err.span.line, err.span.col, err.span.offset), (1, 3, 2));
    }

    #[test]
    fn numbers() {
        use TokenKind::*;
        assert_eq!(kinds("1 1.5 2e3 1E-2 3.")[..5], [Int(1), Real(1.5), Real(2000.0), Real(0.01), Int(3)]);
        assert_eq!(kinds("2e")[..2], [Int(2), ident("e")]);
        assert!(lex("99999999999999999999").is_err());
        assert!(lex("1e999").is_err());
    }

    #[test]
    fn comments_and_positions() {
        let toks = lex("# header\n  x = 1 # trailing\ny").unwrap();
        assert_eq!(toks[0].kind, ident("x"));
        assert_eq!((toks[0].span.line, toks[0].span.col), (2, 3));
        assert_eq!((toks[3].span.line, toks[3].span.col), (3, 1));
    }

    #[test]
    fn spans_reconstruct_source() {
        let src = "model m(a) {\n  x ~ Normal.(a' * b[1, 2], 1.5e0) # c\n  if x <= -2 { reject }\n}";
        let toks = lex(src).unwrap();
        let joined: String = toks.iter().map(|t| &src[t.span.offset..t.span.offset + t.span.len]).collect();
        let expected: String = src
            .lines()
            .map(|l| l.split('#').next().unwrap())
            .collect::<String>()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        assert_eq!(joined, expected);
        assert!(toks.windows(2).all(|w| w[0].span.offset < w[1].span.offset));
    }
}
