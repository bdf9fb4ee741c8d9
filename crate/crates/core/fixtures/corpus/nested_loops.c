// args: 6
int f(int n) {
    int c = 0;
    for (int i = 0; i < n; i++)
        for (int j = 0; j < i; j++)
            if ((i + j) % 3 == 0)
                c += j;
    return c;
}
