pub mod adversary;
pub mod annotations;
pub mod corpus;
pub mod diff;
pub mod dot;
pub mod output;
pub mod protocol;
pub mod sexpr;
pub mod skeleton;
pub mod solver;
pub mod terms;
