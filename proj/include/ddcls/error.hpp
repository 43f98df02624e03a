#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ddcls {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or parameter lengths that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Weight store cannot be bound to a model: lists offending tensor names.
class BindError : public Error {
public:
    BindError(std::string what, std::vector<std::string> missing, std::vector<std::string> extra,
              std::vector<std::string> mismatched)
        : Error(std::move(what)), missing(std::move(missing)), extra(std::move(extra)),
          mismatched(std::move(mismatched))
    {
    }

    std::vector<std::string> missing;
    std::vector<std::string> extra;
    std::vector<std::string> mismatched;
};

class DatasetError : public Error {
public:
    using Error::Error;
};

class ImageError : public Error {
public:
    using Error::Error;
};

class TrainError : public Error {
public:
    using Error::Error;
};

} // namespace ddcls
