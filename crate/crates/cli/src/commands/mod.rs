pub mod evaluate;
pub mod gradcheck;
pub mod inspect;
pub mod serve;
pub mod simulate;
pub mod synth;
pub mod training;
