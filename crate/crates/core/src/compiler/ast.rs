//! Surface syntax of the accepted C subset.

#[derive(Debug, Clone, PartialEq)]
pub enum BaseType {
    Void,
    Int,
    Char,
    Short,
    Bool,
    Long,
    /// Index into [`Unit::aggregates`].
    Aggregate(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateDef {
    pub name: Option<String>,
    pub is_union: bool,
    pub fields: Vec<FieldDecl>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDecl {
    pub base: BaseType,
    pub declarator: Declarator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Declarator {
    pub name: String,
    pub pointer: bool,
    pub dim: Option<i128>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Designator {
    Index(i128),
    Range(i128, i128),
    Field(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Expr(Expr),
    List(Vec<(Option<Designator>, Init)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub restrict: Option<String>,
    pub base: BaseType,
    pub declarator: Declarator,
    pub init: Option<Init>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Xor,
    And,
    Or,
    Shl,
    Shr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    BitNot,
    Not,
    Plus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(i128),
    Var(String),
    Index(Box<Expr>, Box<Expr>),
    Member(Box<Expr>, String),
    Arrow(Box<Expr>, String),
    Deref(Box<Expr>),
    AddrOf(Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    LogAnd(Box<Expr>, Box<Expr>),
    LogOr(Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Cast(BaseType, bool, Box<Expr>),
    Assign(Option<BinOp>, Box<Expr>, Box<Expr>),
    IncDec { inc: bool, target: Box<Expr> },
    Comma(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl(Vec<VarDecl>),
    Expr(Expr),
    If(Expr, Box<Stmt>, Option<Box<Stmt>>),
    While(Expr, Box<Stmt>),
    DoWhile(Box<Stmt>, Expr),
    For(Option<Box<Stmt>>, Option<Expr>, Option<Expr>, Box<Stmt>),
    Block(Vec<Stmt>),
    Return(Option<Expr>),
    Break,
    Continue,
    Goto(String),
    Label(String, Box<Stmt>),
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub restrict: Option<String>,
    pub base: BaseType,
    pub pointer: bool,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDef {
    pub ret: BaseType,
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Unit {
    pub aggregates: Vec<AggregateDef>,
    pub globals: Vec<VarDecl>,
    pub funcs: Vec<FuncDef>,
}
