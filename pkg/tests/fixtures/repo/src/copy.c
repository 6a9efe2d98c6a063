#include <string.h>

int copy_bytes(char *dst, const char *src, size_t n)
{
    memcpy(dst, src, n);
    return (int)n;
}
