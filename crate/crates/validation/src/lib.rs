//! Holds the `acceptance` test target. It lives in its own package so that a
//! failing acceptance run does not stop the other suites from running first.
