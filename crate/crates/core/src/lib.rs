pub mod calibration;
pub mod corpus;
pub mod elicitation;
pub mod report;
pub mod special;
