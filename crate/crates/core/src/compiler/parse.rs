//! Lexer and recursive-descent parser. Object-like `#define` macros are
//! expanded during lexing; other preprocessor lines are ignored.

use std::collections::HashMap;

use super::ast::*;
use super::CompileError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(i128),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
}

const PUNCTS: [&str; 48] = [
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "+", "-", "*", "/", "%", "<", ">", "=", "!", "~",
    "&", "|", "^", "?", ":", ";", ",", ".", "(", ")", "[", "]", "{", "}", "#", "\\",
];

fn syntax(line: usize, msg: impl Into<String>) -> CompileError {
    CompileError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn lex_line(text: &str, line: usize, out: &mut Vec<Token>) -> Result<(), CompileError> {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[s..i].to_string()),
                line,
            });
        } else if c.is_ascii_digit() {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric()) {
                i += 1;
            }
            let lit = text[s..i].trim_end_matches(['u', 'U', 'l', 'L']);
            let v = if let Some(h) = lit.strip_prefix("0x").or_else(|| lit.strip_prefix("0X")) {
                i128::from_str_radix(h, 16)
            } else if lit.len() > 1 && lit.starts_with('0') {
                i128::from_str_radix(&lit[1..], 8)
            } else {
                lit.parse()
            }
            .map_err(|_| syntax(line, format!("bad number `{}`", &text[s..i])))?;
            out.push(Token {
                tok: Tok::Num(v),
                line,
            });
        } else if c == '\'' {
            let rest = &text[i + 1..];
            let (v, len) = match rest.as_bytes() {
                [b'\\', e, b'\'', ..] => (
                    match e {
                        b'n' => 10,
                        b't' => 9,
                        b'0' => 0,
                        other => *other as i128,
                    },
                    4,
                ),
                [ch, b'\'', ..] => (*ch as i128, 3),
                _ => return Err(syntax(line, "bad character literal")),
            };
            out.push(Token {
                tok: Tok::Num(v),
                line,
            });
            i += len;
        } else {
            let p = PUNCTS
                .iter()
                .find(|p| text[i..].starts_with(**p))
                .ok_or_else(|| syntax(line, format!("unexpected character `{c}`")))?;
            out.push(Token {
                tok: Tok::Punct(p),
                line,
            });
            i += p.len();
        }
    }
    Ok(())
}

fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, chars.peek()) {
            ('/', Some('/')) => {
                for d in chars.by_ref() {
                    if d == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            ('/', Some('*')) => {
                chars.next();
                let mut prev = ' ';
                for d in chars.by_ref() {
                    if d == '\n' {
                        out.push('\n');
                    }
                    if prev == '*' && d == '/' {
                        break;
                    }
                    prev = d;
                }
                out.push(' ');
            }
            _ => out.push(c),
        }
    }
    out
}

fn lex(src: &str) -> Result<Vec<Token>, CompileError> {
    let text = strip_comments(src);
    let mut defines: HashMap<String, Vec<Tok>> = HashMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let t = raw.trim_start();
        if let Some(d) = t.strip_prefix('#') {
            let d = d.trim_start();
            if let Some(body) = d.strip_prefix("define") {
                let mut toks = Vec::new();
                lex_line(body, line, &mut toks)?;
                let Some(Tok::Ident(name)) = toks.first().map(|t| t.tok.clone()) else {
                    return Err(syntax(line, "#define needs a name"));
                };
                if toks.get(1).map(|t| &t.tok) == Some(&Tok::Punct("(")) && !body.contains(&format!("{name} (")) {
                    return Err(CompileError::Unsupported {
                        line,
                        msg: "function-like macros".into(),
                    });
                }
                let expansion: Vec<Tok> = toks[1..]
                    .iter()
                    .flat_map(|t| match &t.tok {
                        Tok::Ident(s) if defines.contains_key(s) => defines[s].clone(),
                        other => vec![other.clone()],
                    })
                    .collect();
                defines.insert(name, expansion);
            }
            continue;
        }
        let mut toks = Vec::new();
        lex_line(raw, line, &mut toks)?;
        for t in toks {
            match &t.tok {
                Tok::Ident(s) if defines.contains_key(s) => {
                    out.extend(defines[s].iter().map(|tok| Token {
                        tok: tok.clone(),
                        line,
                    }));
                }
                _ => out.push(t),
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        line: text.lines().count() + 1,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    unit: Unit,
}

const TYPE_WORDS: [&str; 11] = [
    "void", "int", "char", "short", "long", "bool", "_Bool", "signed", "struct", "union", "const",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn line(&self) -> usize {
        self.toks[self.pos].line
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == w)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<(), CompileError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(syntax(
                self.line(),
                format!("expected `{p}`, found {}", self.describe()),
            ))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn ident(&mut self) -> Result<String, CompileError> {
        match self.bump() {
            Tok::Ident(s) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(syntax(
                    self.line(),
                    format!("expected identifier, found {}", self.describe()),
                ))
            }
        }
    }

    fn starts_type(&self) -> bool {
        matches!(self.peek(), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str()) || s == "restrict" || s == "unsigned" || s == "static")
    }

    fn base_type(&mut self) -> Result<BaseType, CompileError> {
        let line = self.line();
        while self.eat_word("const") || self.eat_word("static") {}
        if self.is_word("unsigned") || self.is_word("float") || self.is_word("double") {
            return Err(CompileError::Unsupported {
                line,
                msg: format!("type {}", self.describe()),
            });
        }
        self.eat_word("signed");
        let t = match self.peek().clone() {
            Tok::Ident(s) => match s.as_str() {
                "void" => {
                    self.bump();
                    BaseType::Void
                }
                "int" => {
                    self.bump();
                    BaseType::Int
                }
                "char" => {
                    self.bump();
                    BaseType::Char
                }
                "short" => {
                    self.bump();
                    self.eat_word("int");
                    BaseType::Short
                }
                "bool" | "_Bool" => {
                    self.bump();
                    BaseType::Bool
                }
                "long" => {
                    self.bump();
                    self.eat_word("long");
                    self.eat_word("int");
                    BaseType::Long
                }
                "struct" | "union" => self.aggregate()?,
                _ if self.pos > 0 && matches!(self.toks[self.pos - 1].tok, Tok::Ident(ref p) if p == "signed") => {
                    BaseType::Int
                }
                _ => return Err(syntax(line, format!("expected type, found `{s}`"))),
            },
            _ => return Err(syntax(line, format!("expected type, found {}", self.describe()))),
        };
        while self.eat_word("const") {}
        Ok(t)
    }

    fn aggregate(&mut self) -> Result<BaseType, CompileError> {
        let line = self.line();
        let is_union = self.ident()? == "union";
        let name = match self.peek() {
            Tok::Ident(_) => Some(self.ident()?),
            _ => None,
        };
        if !self.eat("{") {
            let name = name.ok_or_else(|| syntax(line, "anonymous aggregate without body"))?;
            let idx = self
                .unit
                .aggregates
                .iter()
                .position(|a| a.name.as_deref() == Some(&name) && a.is_union == is_union)
                .ok_or_else(|| CompileError::Semantic {
                    line,
                    msg: format!("unknown aggregate `{name}`"),
                })?;
            return Ok(BaseType::Aggregate(idx));
        }
        let mut fields = Vec::new();
        while !self.eat("}") {
            let base = self.base_type()?;
            loop {
                let declarator = self.declarator()?;
                fields.push(FieldDecl {
                    base: base.clone(),
                    declarator,
                });
                if !self.eat(",") {
                    break;
                }
            }
            self.expect(";")?;
        }
        self.unit.aggregates.push(AggregateDef {
            name,
            is_union,
            fields,
            line,
        });
        Ok(BaseType::Aggregate(self.unit.aggregates.len() - 1))
    }

    fn declarator(&mut self) -> Result<Declarator, CompileError> {
        let line = self.line();
        let pointer = self.eat("*");
        if pointer && self.is_punct("*") {
            return Err(CompileError::Unsupported {
                line,
                msg: "pointers to pointers".into(),
            });
        }
        self.eat_word("restrict");
        let name = self.ident()?;
        let dim = if self.eat("[") {
            let e = self.expr()?;
            self.expect("]")?;
            let n = const_eval(&e).ok_or_else(|| syntax(line, "array size must be constant"))?;
            if n <= 0 {
                return Err(syntax(line, "array size must be positive"));
            }
            if self.is_punct("[") {
                return Err(CompileError::Unsupported {
                    line,
                    msg: "multi-dimensional arrays".into(),
                });
            }
            Some(n)
        } else {
            None
        };
        Ok(Declarator {
            name,
            pointer,
            dim,
            line,
        })
    }

    fn restrict_prefix(&mut self) -> Result<Option<String>, CompileError> {
        if self.eat_word("restrict") {
            Ok(Some(self.ident()?))
        } else {
            Ok(None)
        }
    }

    fn init(&mut self) -> Result<Init, CompileError> {
        if !self.eat("{") {
            return Ok(Init::Expr(self.assign_expr()?));
        }
        let mut items = Vec::new();
        while !self.eat("}") {
            let line = self.line();
            let desig = if self.eat("[") {
                let a = self.cond_expr()?;
                let a = const_eval(&a).ok_or_else(|| syntax(line, "designator must be constant"))?;
                let d = if self.eat("...") {
                    let b = self.cond_expr()?;
                    let b = const_eval(&b).ok_or_else(|| syntax(line, "designator must be constant"))?;
                    Designator::Range(a, b)
                } else {
                    Designator::Index(a)
                };
                self.expect("]")?;
                self.expect("=")?;
                Some(d)
            } else if self.eat(".") {
                let f = self.ident()?;
                self.expect("=")?;
                Some(Designator::Field(f))
            } else {
                None
            };
            items.push((desig, self.init()?));
            if !self.eat(",") {
                self.expect("}")?;
                break;
            }
        }
        Ok(Init::List(items))
    }

    fn var_decls(&mut self) -> Result<Vec<VarDecl>, CompileError> {
        let restrict = self.restrict_prefix()?;
        let base = self.base_type()?;
        let mut out = Vec::new();
        if self.is_punct(";") {
            // A bare aggregate definition.
            self.bump();
            return Ok(out);
        }
        loop {
            let declarator = self.declarator()?;
            let init = if self.eat("=") { Some(self.init()?) } else { None };
            out.push(VarDecl {
                restrict: restrict.clone(),
                base: base.clone(),
                declarator,
                init,
            });
            if !self.eat(",") {
                break;
            }
        }
        self.expect(";")?;
        Ok(out)
    }

    fn top_level(&mut self) -> Result<(), CompileError> {
        let line = self.line();
        if self.is_word("typedef") {
            return Err(CompileError::Unsupported {
                line,
                msg: "typedef".into(),
            });
        }
        // Function definitions look like `type name (`.
        let save = self.pos;
        let n_aggr = self.unit.aggregates.len();
        let restrict = self.restrict_prefix()?;
        let base = self.base_type()?;
        let is_fn = matches!(self.peek(), Tok::Ident(_)) && self.peek_at(1) == &Tok::Punct("(");
        if !is_fn || restrict.is_some() {
            // Rewind, dropping any aggregate the lookahead defined.
            self.pos = save;
            self.unit.aggregates.truncate(n_aggr);
            let decls = self.var_decls()?;
            self.unit.globals.extend(decls);
            return Ok(());
        }
        let name = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !(self.is_word("void") && self.peek_at(1) == &Tok::Punct(")")) {
            while !self.is_punct(")") {
                let restrict = self.restrict_prefix()?;
                let base = self.base_type()?;
                let pointer = self.eat("*");
                self.eat_word("restrict");
                let pname = self.ident()?;
                if self.is_punct("[") {
                    return Err(CompileError::Unsupported {
                        line: self.line(),
                        msg: "array parameters".into(),
                    });
                }
                params.push(Param {
                    restrict,
                    base,
                    pointer,
                    name: pname,
                });
                if !self.eat(",") {
                    break;
                }
            }
        } else {
            self.bump();
        }
        self.expect(")")?;
        if self.eat(";") {
            return Err(CompileError::Unsupported {
                line,
                msg: "function prototypes".into(),
            });
        }
        self.expect("{")?;
        let body = self.block_body()?;
        self.unit.funcs.push(FuncDef {
            ret: base,
            name,
            params,
            body,
            line,
        });
        Ok(())
    }

    fn block_body(&mut self) -> Result<Vec<Stmt>, CompileError> {
        let mut out = Vec::new();
        while !self.eat("}") {
            if self.peek() == &Tok::Eof {
                return Err(syntax(self.line(), "unterminated block"));
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> Result<Stmt, CompileError> {
        let line = self.line();
        let kind = if self.eat(";") {
            StmtKind::Empty
        } else if self.eat("{") {
            StmtKind::Block(self.block_body()?)
        } else if self.starts_type() {
            StmtKind::Decl(self.var_decls()?)
        } else if let Tok::Ident(w) = self.peek().clone() {
            match w.as_str() {
                "if" => {
                    self.bump();
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    let t = Box::new(self.stmt()?);
                    let e = if self.eat_word("else") {
                        Some(Box::new(self.stmt()?))
                    } else {
                        None
                    };
                    StmtKind::If(c, t, e)
                }
                "while" => {
                    self.bump();
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    StmtKind::While(c, Box::new(self.stmt()?))
                }
                "do" => {
                    self.bump();
                    let body = Box::new(self.stmt()?);
                    if !self.eat_word("while") {
                        return Err(syntax(self.line(), "expected `while`"));
                    }
                    self.expect("(")?;
                    let c = self.expr()?;
                    self.expect(")")?;
                    self.expect(";")?;
                    StmtKind::DoWhile(body, c)
                }
                "for" => {
                    self.bump();
                    self.expect("(")?;
                    let init = if self.eat(";") {
                        None
                    } else if self.starts_type() {
                        let l = self.line();
                        Some(Box::new(Stmt {
                            kind: StmtKind::Decl(self.var_decls()?),
                            line: l,
                        }))
                    } else {
                        let l = self.line();
                        let e = self.expr()?;
                        self.expect(";")?;
                        Some(Box::new(Stmt {
                            kind: StmtKind::Expr(e),
                            line: l,
                        }))
                    };
                    let cond = if self.is_punct(";") { None } else { Some(self.expr()?) };
                    self.expect(";")?;
                    let step = if self.is_punct(")") { None } else { Some(self.expr()?) };
                    self.expect(")")?;
                    StmtKind::For(init, cond, step, Box::new(self.stmt()?))
                }
                "return" => {
                    self.bump();
                    let e = if self.is_punct(";") { None } else { Some(self.expr()?) };
                    self.expect(";")?;
                    StmtKind::Return(e)
                }
                "break" => {
                    self.bump();
                    self.expect(";")?;
                    StmtKind::Break
                }
                "continue" => {
                    self.bump();
                    self.expect(";")?;
                    StmtKind::Continue
                }
                "goto" => {
                    self.bump();
                    if self.is_punct("*") {
                        return Err(CompileError::Unsupported {
                            line,
                            msg: "computed goto".into(),
                        });
                    }
                    let l = self.ident()?;
                    self.expect(";")?;
                    StmtKind::Goto(l)
                }
                "switch" | "setjmp" | "longjmp" => {
                    return Err(CompileError::Unsupported { line, msg: w });
                }
                _ if self.peek_at(1) == &Tok::Punct(":") => {
                    self.bump();
                    self.bump();
                    let inner = if self.is_punct("}") {
                        Stmt {
                            kind: StmtKind::Empty,
                            line,
                        }
                    } else {
                        self.stmt()?
                    };
                    StmtKind::Label(w, Box::new(inner))
                }
                _ => {
                    let e = self.expr()?;
                    self.expect(";")?;
                    StmtKind::Expr(e)
                }
            }
        } else {
            let e = self.expr()?;
            self.expect(";")?;
            StmtKind::Expr(e)
        };
        Ok(Stmt { kind, line })
    }

    fn mk(&self, kind: ExprKind, line: usize) -> Expr {
        Expr { kind, line }
    }

    fn expr(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let mut e = self.assign_expr()?;
        while self.eat(",") {
            let r = self.assign_expr()?;
            e = self.mk(ExprKind::Comma(Box::new(e), Box::new(r)), line);
        }
        Ok(e)
    }

    fn assign_expr(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let lhs = self.cond_expr()?;
        let op = match self.peek() {
            Tok::Punct("=") => None,
            Tok::Punct("+=") => Some(BinOp::Add),
            Tok::Punct("-=") => Some(BinOp::Sub),
            Tok::Punct("*=") => Some(BinOp::Mul),
            Tok::Punct("/=") => Some(BinOp::Div),
            Tok::Punct("%=") => Some(BinOp::Rem),
            Tok::Punct("&=") => Some(BinOp::And),
            Tok::Punct("|=") => Some(BinOp::Or),
            Tok::Punct("^=") => Some(BinOp::Xor),
            Tok::Punct("<<=") => Some(BinOp::Shl),
            Tok::Punct(">>=") => Some(BinOp::Shr),
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.assign_expr()?;
        Ok(self.mk(ExprKind::Assign(op, Box::new(lhs), Box::new(rhs)), line))
    }

    fn cond_expr(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        let c = self.binary(0)?;
        if !self.eat("?") {
            return Ok(c);
        }
        let a = self.expr()?;
        self.expect(":")?;
        let b = self.cond_expr()?;
        Ok(self.mk(
            ExprKind::Ternary(Box::new(c), Box::new(a), Box::new(b)),
            line,
        ))
    }

    fn binary(&mut self, level: usize) -> Result<Expr, CompileError> {
        const LEVELS: [&[&str]; 10] = [
            &["||"],
            &["&&"],
            &["|"],
            &["^"],
            &["&"],
            &["==", "!="],
            &["<", ">", "<=", ">="],
            &["<<", ">>"],
            &["+", "-"],
            &["*", "/", "%"],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let line = self.line();
            let Tok::Punct(p) = *self.peek() else { break };
            if !LEVELS[level].contains(&p) {
                break;
            }
            self.bump();
            let rhs = Box::new(self.binary(level + 1)?);
            let l = Box::new(lhs);
            let kind = match p {
                "||" => ExprKind::LogOr(l, rhs),
                "&&" => ExprKind::LogAnd(l, rhs),
                "|" => ExprKind::Binary(BinOp::Or, l, rhs),
                "^" => ExprKind::Binary(BinOp::Xor, l, rhs),
                "&" => ExprKind::Binary(BinOp::And, l, rhs),
                "==" => ExprKind::Cmp(CmpOp::Eq, l, rhs),
                "!=" => ExprKind::Cmp(CmpOp::Ne, l, rhs),
                "<" => ExprKind::Cmp(CmpOp::Lt, l, rhs),
                ">" => ExprKind::Cmp(CmpOp::Gt, l, rhs),
                "<=" => ExprKind::Cmp(CmpOp::Le, l, rhs),
                ">=" => ExprKind::Cmp(CmpOp::Ge, l, rhs),
                "<<" => ExprKind::Binary(BinOp::Shl, l, rhs),
                ">>" => ExprKind::Binary(BinOp::Shr, l, rhs),
                "+" => ExprKind::Binary(BinOp::Add, l, rhs),
                "-" => ExprKind::Binary(BinOp::Sub, l, rhs),
                "*" => ExprKind::Binary(BinOp::Mul, l, rhs),
                "/" => ExprKind::Binary(BinOp::Div, l, rhs),
                _ => ExprKind::Binary(BinOp::Rem, l, rhs),
            };
            lhs = self.mk(kind, line);
        }
        Ok(lhs)
    }

    fn is_cast(&self) -> bool {
        self.is_punct("(")
            && matches!(self.peek_at(1), Tok::Ident(s) if TYPE_WORDS.contains(&s.as_str()) || s == "unsigned")
    }

    fn unary(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        if self.is_cast() {
            self.bump();
            let t = self.base_type()?;
            let ptr = self.eat("*");
            self.expect(")")?;
            let e = self.unary()?;
            return Ok(self.mk(ExprKind::Cast(t, ptr, Box::new(e)), line));
        }
        let un = |op| move |e: Expr| ExprKind::Unary(op, Box::new(e));
        let kind: Box<dyn Fn(Expr) -> ExprKind> = match self.peek() {
            Tok::Punct("-") => Box::new(un(UnOp::Neg)),
            Tok::Punct("+") => Box::new(un(UnOp::Plus)),
            Tok::Punct("~") => Box::new(un(UnOp::BitNot)),
            Tok::Punct("!") => Box::new(un(UnOp::Not)),
            Tok::Punct("*") => Box::new(|e| ExprKind::Deref(Box::new(e))),
            Tok::Punct("&") => Box::new(|e| ExprKind::AddrOf(Box::new(e))),
            Tok::Punct("++") => Box::new(|e| ExprKind::IncDec {
                inc: true,
                target: Box::new(e),
            }),
            Tok::Punct("--") => Box::new(|e| ExprKind::IncDec {
                inc: false,
                target: Box::new(e),
            }),
            Tok::Ident(s) if s == "sizeof" => {
                return Err(CompileError::Unsupported {
                    line,
                    msg: "sizeof".into(),
                })
            }
            _ => return self.postfix(),
        };
        self.bump();
        let e = self.unary()?;
        Ok(self.mk(kind(e), line))
    }

    fn postfix(&mut self) -> Result<Expr, CompileError> {
        let mut e = self.primary()?;
        loop {
            let line = self.line();
            if self.eat("[") {
                let i = self.expr()?;
                self.expect("]")?;
                e = self.mk(ExprKind::Index(Box::new(e), Box::new(i)), line);
            } else if self.eat(".") {
                let f = self.ident()?;
                e = self.mk(ExprKind::Member(Box::new(e), f), line);
            } else if self.eat("->") {
                let f = self.ident()?;
                e = self.mk(ExprKind::Arrow(Box::new(e), f), line);
            } else if self.is_punct("++") || self.is_punct("--") {
                // Postfix forms are only accepted where the value is unused,
                // so they share the prefix representation.
                let inc = self.bump() == Tok::Punct("++");
                e = self.mk(
                    ExprKind::IncDec {
                        inc,
                        target: Box::new(e),
                    },
                    line,
                );
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, CompileError> {
        let line = self.line();
        match self.bump() {
            Tok::Num(n) => Ok(self.mk(ExprKind::Num(n), line)),
            Tok::Ident(name) => {
                if self.eat("(") {
                    let mut args = Vec::new();
                    while !self.eat(")") {
                        args.push(self.assign_expr()?);
                        if !self.eat(",") {
                            self.expect(")")?;
                            break;
                        }
                    }
                    Ok(self.mk(ExprKind::Call(name, args), line))
                } else {
                    Ok(self.mk(ExprKind::Var(name), line))
                }
            }
            Tok::Punct("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => {
                self.pos -= 1;
                Err(syntax(line, format!("unexpected {}", self.describe())))
            }
        }
    }
}

/// Fold an integer constant expression.
pub fn const_eval(e: &Expr) -> Option<i128> {
    Some(match &e.kind {
        ExprKind::Num(n) => *n,
        ExprKind::Unary(UnOp::Neg, a) => -const_eval(a)?,
        ExprKind::Unary(UnOp::Plus, a) => const_eval(a)?,
        ExprKind::Unary(UnOp::BitNot, a) => !const_eval(a)?,
        ExprKind::Binary(op, a, b) => {
            let (x, y) = (const_eval(a)?, const_eval(b)?);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div if y != 0 => x / y,
                BinOp::Rem if y != 0 => x % y,
                BinOp::Xor => x ^ y,
                BinOp::And => x & y,
                BinOp::Or => x | y,
                BinOp::Shl if (0..64).contains(&y) => x << y,
                BinOp::Shr if (0..64).contains(&y) => x >> y,
                _ => return None,
            }
        }
        _ => return None,
    })
}

pub fn parse(src: &str) -> Result<Unit, CompileError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        unit: Unit::default(),
    };
    while p.peek() != &Tok::Eof {
        p.top_level()?;
    }
    Ok(p.unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ackermann() {
        let u = parse(
            "int A(int m,int n) { if (m == 0) return n+1; if (n == 0) return A(m-1, 1); \
             return A(m-1, A(m, n-1)); }",
        )
        .unwrap();
        assert_eq!(u.funcs.len(), 1);
        assert_eq!(u.funcs[0].params.len(), 2);
        assert_eq!(u.funcs[0].body.len(), 3);
    }

    #[test]
    fn defines_and_range_designators() {
        let u = parse("#define N 10\nint S(int n) { int a[N] = {[0 ... N-1] = 1,}; return a[2]; }")
            .unwrap();
        let StmtKind::Decl(d) = &u.funcs[0].body[0].kind else {
            panic!()
        };
        assert_eq!(d[0].declarator.dim, Some(10));
        let Some(Init::List(items)) = &d[0].init else {
            panic!()
        };
        assert_eq!(items[0].0, Some(Designator::Range(0, 9)));
    }

    #[test]
    fn precedence() {
        let u = parse("int f(int a) { return a + 2 * 3 < 7 && !a; }").unwrap();
        let StmtKind::Return(Some(e)) = &u.funcs[0].body[0].kind else {
            panic!()
        };
        assert!(matches!(e.kind, ExprKind::LogAnd(..)));
    }

    #[test]
    fn structs_unions_and_restrict() {
        let src = "struct P { int x; int y; };
            union U { int a[2]; struct P p; };
            struct P G[3];
            int f(void) { restrict G struct P *q = &G[1]; union U u; u.p.y = 3; return q->x + u.a[1]; }";
        let u = parse(src).unwrap();
        assert_eq!(u.aggregates.len(), 2);
        assert_eq!(u.globals.len(), 1);
        let StmtKind::Decl(d) = &u.funcs[0].body[0].kind else {
            panic!()
        };
        assert_eq!(d[0].restrict.as_deref(), Some("G"));
        assert!(d[0].declarator.pointer);
    }

    #[test]
    fn rejects_unsupported() {
        for src in [
            "int f(void) { goto *p; }",
            "unsigned x;",
            "int f(void) { switch (1) {} }",
            "typedef int T;",
        ] {
            assert!(
                matches!(parse(src), Err(CompileError::Unsupported { .. })),
                "{src}"
            );
        }
    }

    #[test]
    fn syntax_error_has_line() {
        let e = parse("int f(void) {\n return 1 +; }").unwrap_err();
        assert!(matches!(e, CompileError::Syntax { line: 2, .. }), "{e}");
    }
}
