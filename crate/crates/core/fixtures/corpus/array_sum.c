// args:
int A[6] = {3, 1, 4, 1, 5, 9};
int f(void) {
    int s = 0;
    for (int i = 0; i < 6; i++)
        s += A[i];
    return s;
}
