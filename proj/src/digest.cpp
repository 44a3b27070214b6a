#include "skd/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>
#include <stdexcept>

namespace skd {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("SHA-256 initialisation failed");
    }
  }

  void update(const void* data, std::size_t size) {
    if (size && EVP_DigestUpdate(ctx_.get(), data, size) != 1) {
      throw std::runtime_error("SHA-256 update failed");
    }
  }
  void update(std::string_view text) { update(text.data(), text.size()); }

  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[md[i] >> 4]);
      out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string tensor_digest(const std::vector<std::pair<std::string, torch::Tensor>>& named) {
  Sha256 h;
  for (const auto& [name, tensor] : named) {
    auto t = tensor.detach().contiguous().cpu();
    h.update(name);
    h.update(std::string(c10::toString(t.scalar_type())));
    for (auto d : t.sizes()) h.update(&d, sizeof(d));
    h.update(t.data_ptr(), t.numel() * t.element_size());
  }
  return h.hex();
}

}  // namespace skd
