#include "bytenmt/model.hpp"

namespace bytenmt {

template class TransformerModel<float>;
template class TransformerModel<double>;
template Tensor<float> positional_encoding<float>(int, int);
template Tensor<double> positional_encoding<double>(int, int);
template Tensor<float> one_hot_rows<float>(const ByteSequence&, int, int);
template Tensor<double> one_hot_rows<double>(const ByteSequence&, int, int);

}  // namespace bytenmt
