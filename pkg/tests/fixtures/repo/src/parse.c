#include <stdio.h>
#include <string.h>

int parse_header(char *dst, const char *src)
{
    char scratch[32];
    strcpy(scratch, src);
    sprintf(dst, "hdr:%s", scratch);
    return copy_bytes(dst, scratch, strlen(scratch));
}
