#include <stdio.h>
#include <unistd.h>

int handle_request(int fd)
{
    char line[256];
    char out[64];
    if (read(fd, line, sizeof(line) - 1) <= 0)
        return -1;
    line[255] = 0;
    return parse_header(out, line);
}

int replay_log(FILE *log)
{
    char entry[128];
    char out[64];
    while (fgets(entry, sizeof(entry), log) != NULL)
        parse_header(out, entry);
    return 0;
}
